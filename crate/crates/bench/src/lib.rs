//! Fixtures shared by the benchmarks.

use entrodrop_core::model::capture_trace;
use entrodrop_core::{
    ActivationTrace, BlockMask, Matrix, Rng, SyntheticCorpus, ToyModelConfig, ToyTransformer,
};
use entrodrop_core::model::CorpusGenerator;

/// `rows × cols` standard normal sample.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal() as f32)
}

/// Default-size untrained model.
pub fn toy_model(max_seq: usize) -> ToyTransformer {
    ToyTransformer::init(ToyModelConfig {
        max_seq,
        ..ToyModelConfig::default()
    })
    .expect("default config is valid")
}

/// Trace of `sequences × 32` calibration tokens through an untrained model.
pub fn toy_trace(sequences: usize) -> ActivationTrace {
    let model = toy_model(32);
    let gen = CorpusGenerator::Markov { order: 1, seed: 3 };
    let corpus = SyntheticCorpus::generate(gen, model.config().vocab, sequences, 32)
        .expect("corpus parameters are valid");
    capture_trace(&model, &corpus, &BlockMask::none(model.config().layers))
        .expect("corpus fits the model")
}
