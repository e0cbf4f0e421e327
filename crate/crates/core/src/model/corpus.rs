use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Candidate next tokens per Markov context and their probabilities.
const MARKOV_WEIGHTS: [f64; 4] = [0.55, 0.25, 0.15, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusGenerator {
    /// Order 0 is uniform i.i.d. tokens. For order `n ≥ 1` every context of
    /// the previous `n` tokens maps, through a seeded hash, to four candidate
    /// successors drawn with probabilities 0.55 / 0.25 / 0.15 / 0.05.
    Markov { order: usize, seed: u64 },
    /// Each sequence repeats a random pattern of `period` tokens; every token
    /// is independently replaced by a uniform one with probability `noise`.
    Repetition { period: usize, noise: f64, seed: u64 },
}

impl CorpusGenerator {
    pub fn seed(&self) -> u64 {
        match *self {
            CorpusGenerator::Markov { seed, .. } | CorpusGenerator::Repetition { seed, .. } => seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if let CorpusGenerator::Repetition { period, noise, .. } = *self {
            if period == 0 {
                return Err(Error::contract("repetition period must be at least 1"));
            }
            if !(0.0..=1.0).contains(&noise) {
                return Err(Error::contract(format!("noise must be in [0, 1], got {noise}")));
            }
        }
        Ok(())
    }
}

/// Token sequences over `[0, vocab)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    vocab: usize,
    sequences: Vec<Vec<u32>>,
    generator: Option<CorpusGenerator>,
}

fn context_hash(seed: u64, context: &[u32]) -> u64 {
    let mut h = seed ^ 0x6A09_E667_F3BC_C908;
    for &t in context {
        h = (h ^ u64::from(t)).wrapping_mul(0x1000_0000_01B3).rotate_left(29);
        h ^= h >> 31;
    }
    h
}

impl SyntheticCorpus {
    /// `count` sequences of `seq_len` tokens from `generator`.
    pub fn generate(
        generator: CorpusGenerator,
        vocab: usize,
        count: usize,
        seq_len: usize,
    ) -> Result<Self> {
        generator.validate()?;
        if vocab == 0 || vocab > u32::MAX as usize {
            return Err(Error::contract(format!("vocab {vocab} is out of range")));
        }
        if count == 0 || seq_len == 0 {
            return Err(Error::contract("corpus needs at least one non-empty sequence"));
        }
        let mut rng = Rng::new(generator.seed());
        let v = vocab as u64;
        let sequences = (0..count)
            .map(|_| match generator {
                CorpusGenerator::Markov { order: 0, .. } => {
                    (0..seq_len).map(|_| rng.below(v) as u32).collect()
                }
                CorpusGenerator::Markov { order, seed } => {
                    let mut seq: Vec<u32> = Vec::with_capacity(seq_len);
                    while seq.len() < seq_len {
                        if seq.len() < order {
                            seq.push(rng.below(v) as u32);
                            continue;
                        }
                        let ctx = &seq[seq.len() - order..];
                        let mut table = Rng::new(context_hash(seed, ctx));
                        let candidates: Vec<u32> =
                            (0..MARKOV_WEIGHTS.len()).map(|_| table.below(v) as u32).collect();
                        let u = rng.uniform();
                        let mut cum = 0.0;
                        let mut pick = candidates[MARKOV_WEIGHTS.len() - 1];
                        for (c, w) in candidates.iter().zip(MARKOV_WEIGHTS) {
                            cum += w;
                            if u < cum {
                                pick = *c;
                                break;
                            }
                        }
                        seq.push(pick);
                    }
                    seq
                }
                CorpusGenerator::Repetition { period, noise, .. } => {
                    let pattern: Vec<u32> = (0..period).map(|_| rng.below(v) as u32).collect();
                    (0..seq_len)
                        .map(|t| {
                            if noise > 0.0 && rng.uniform() < noise {
                                rng.below(v) as u32
                            } else {
                                pattern[t % period]
                            }
                        })
                        .collect()
                }
            })
            .collect();
        Ok(Self {
            vocab,
            sequences,
            generator: Some(generator),
        })
    }

    /// Wraps existing sequences, checking every token against `vocab`.
    pub fn from_sequences(vocab: usize, sequences: Vec<Vec<u32>>) -> Result<Self> {
        for (i, seq) in sequences.iter().enumerate() {
            if let Some(&t) = seq.iter().find(|&&t| t as usize >= vocab) {
                return Err(Error::Input(format!(
                    "sequence {i} contains token {t}, outside the vocabulary of {vocab}"
                )));
            }
        }
        Ok(Self {
            vocab,
            sequences,
            generator: None,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn generator(&self) -> Option<CorpusGenerator> {
        self.generator
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// The first `count` sequences.
    pub fn take(&self, count: usize) -> SyntheticCorpus {
        Self {
            vocab: self.vocab,
            sequences: self.sequences.iter().take(count).cloned().collect(),
            generator: self.generator,
        }
    }
}

/// Writes one token id per line, with an empty line after each sequence.
pub fn write_corpus(corpus: &SyntheticCorpus, mut sink: impl Write) -> Result<()> {
    let io = |source| Error::Io { offset: 0, source };
    for seq in corpus.sequences() {
        for t in seq {
            writeln!(sink, "{t}").map_err(io)?;
        }
        writeln!(sink).map_err(io)?;
    }
    sink.flush().map_err(io)
}

/// Reads newline-delimited token ids. Blank lines separate sequences; a line
/// may also hold several whitespace-separated ids.
pub fn read_corpus(source: impl BufRead, vocab: usize) -> Result<SyntheticCorpus> {
    let mut sequences = Vec::new();
    let mut current = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line.map_err(|source| Error::Io { offset: 0, source })?;
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                sequences.push(std::mem::take(&mut current));
            }
            continue;
        }
        for field in line.split_whitespace() {
            let t: u32 = field.parse().map_err(|_| {
                Error::Input(format!("line {}: '{field}' is not a token id", n + 1))
            })?;
            current.push(t);
        }
    }
    if !current.is_empty() {
        sequences.push(current);
    }
    if sequences.is_empty() {
        return Err(Error::Input("token file contains no tokens".into()));
    }
    SyntheticCorpus::from_sequences(vocab, sequences)
}
