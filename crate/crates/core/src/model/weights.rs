use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::ToyModelConfig;

/// Extra factor on the unembedding's initial scale. At `1/√d` alone the
/// untrained logits have unit spread and perplexity sits well above the
/// vocabulary size; at a tenth of that it starts within half a percent.
pub(crate) const UNEMBED_GAIN: f64 = 0.1;

/// Parameters of one layer. Gains and biases are `1 × n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

pub(crate) const LAYER_TENSORS: [&str; 12] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.gain", "ln2.bias",
    "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
];

impl LayerWeights {
    fn fields(&self) -> [&Matrix; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `vocab × d`
    pub token_embedding: Matrix,
    /// `max_seq × d`
    pub position_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Matrix,
    pub final_bias: Matrix,
    /// `d × vocab`
    pub unembedding: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Fill {
    Normal(f64),
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub fill: Fill,
}

/// Every tensor of a model in storage order. Initialisation, checkpoints and
/// the training parameter vector all follow this order.
pub(crate) fn layout(config: &ToyModelConfig) -> Vec<TensorSpec> {
    let d = config.hidden_dim;
    let f = config.ffn_dim;
    let spec = |name: String, rows, cols, fill| TensorSpec {
        name,
        rows,
        cols,
        fill,
    };
    let inv_sqrt = |fan_in: usize| Fill::Normal(1.0 / (fan_in as f64).sqrt());
    let mut out = vec![
        spec("tok_emb".into(), config.vocab, d, inv_sqrt(1)),
        spec("pos_emb".into(), config.max_seq, d, inv_sqrt(1)),
    ];
    for l in 0..config.layers {
        let shapes = [
            (1, d, Fill::Ones),
            (1, d, Fill::Zeros),
            (d, d, inv_sqrt(d)),
            (d, d, inv_sqrt(d)),
            (d, d, inv_sqrt(d)),
            (d, d, inv_sqrt(d)),
            (1, d, Fill::Ones),
            (1, d, Fill::Zeros),
            (d, f, inv_sqrt(d)),
            (1, f, Fill::Zeros),
            (f, d, inv_sqrt(f)),
            (1, d, Fill::Zeros),
        ];
        for (name, (rows, cols, fill)) in LAYER_TENSORS.iter().zip(shapes) {
            out.push(spec(format!("layers.{l}.{name}"), rows, cols, fill));
        }
    }
    out.push(spec("final.gain".into(), 1, d, Fill::Ones));
    out.push(spec("final.bias".into(), 1, d, Fill::Zeros));
    out.push(spec(
        "unembed".into(),
        d,
        config.vocab,
        Fill::Normal(UNEMBED_GAIN / (d as f64).sqrt()),
    ));
    out
}

impl Weights {
    /// Fills tensors in layout order from one stream seeded by `config.seed`.
    pub(crate) fn init(config: &ToyModelConfig) -> Self {
        let mut rng = Rng::new(config.seed);
        let tensors = layout(config)
            .into_iter()
            .map(|spec| match spec.fill {
                Fill::Normal(std) => {
                    Matrix::from_fn(spec.rows, spec.cols, |_, _| (rng.normal() * std) as f32)
                }
                Fill::Ones => Matrix::from_fn(spec.rows, spec.cols, |_, _| 1.0),
                Fill::Zeros => Matrix::zeros(spec.rows, spec.cols),
            })
            .collect();
        Self::from_tensors(config, tensors).expect("layout shapes are consistent")
    }

    /// Assembles weights from tensors in layout order.
    pub(crate) fn from_tensors(config: &ToyModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        let specs = layout(config);
        if tensors.len() != specs.len() {
            return Err(Error::Structural(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if t.rows() != spec.rows || t.cols() != spec.cols {
                return Err(Error::Dimension {
                    op: "Weights::from_tensors",
                    expected: format!("{} to be {}x{}", spec.name, spec.rows, spec.cols),
                    actual: format!("{}x{}", t.rows(), t.cols()),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked above");
        let token_embedding = next();
        let position_embedding = next();
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                ln1_gain: next(),
                ln1_bias: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            final_gain: next(),
            final_bias: next(),
            unembedding: next(),
        })
    }

    /// `(name, tensor)` pairs in layout order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.token_embedding),
            ("pos_emb".to_string(), &self.position_embedding),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSORS.iter().zip(layer.fields()) {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("final.gain".into(), &self.final_gain));
        out.push(("final.bias".into(), &self.final_bias));
        out.push(("unembed".into(), &self.unembedding));
        out
    }

    pub(crate) fn check_shapes(&self, config: &ToyModelConfig) -> Result<()> {
        let specs = layout(config);
        let tensors = self.tensors();
        if specs.len() != tensors.len() {
            return Err(Error::Structural(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, (_, t)) in specs.iter().zip(tensors) {
            if t.rows() != spec.rows || t.cols() != spec.cols {
                return Err(Error::Dimension {
                    op: "Weights",
                    expected: format!("{} to be {}x{}", spec.name, spec.rows, spec.cols),
                    actual: format!("{}x{}", t.rows(), t.cols()),
                });
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensors_follow_layout() {
        let cfg = ToyModelConfig {
            layers: 2,
            hidden_dim: 8,
            heads: 2,
            ffn_dim: 16,
            vocab: 11,
            max_seq: 5,
            seed: 1,
        };
        let w = Weights::init(&cfg);
        let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
        let specs: Vec<String> = layout(&cfg).into_iter().map(|s| s.name).collect();
        assert_eq!(names, specs);
        assert_eq!(names.len(), 2 + 12 * 2 + 3);
        assert_eq!(names[6], "layers.0.attn.wv");
        assert!(w.layers[1].ln2_gain.data().iter().all(|&g| g == 1.0));
        assert!(w.layers[1].b1.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let cfg = ToyModelConfig {
            layers: 1,
            hidden_dim: 64,
            ffn_dim: 256,
            ..ToyModelConfig::default()
        };
        let w = Weights::init(&cfg);
        let std = |m: &Matrix| {
            let n = m.data().len() as f64;
            (m.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / n).sqrt()
        };
        assert!((std(&w.layers[0].wq) - 0.125).abs() < 0.01);
        assert!((std(&w.layers[0].w2) - 0.0625).abs() < 0.005);
        assert!((std(&w.token_embedding) - 1.0).abs() < 0.05);
    }
}
