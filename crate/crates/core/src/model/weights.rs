use ndarray::{Array1, Array2};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Feed-forward and normalization weights of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    /// Per-dimension RMS normalization scale, length `d_model`.
    pub norm_scale: Array1<f64>,
    /// `d_model x d_ff`
    pub w_in: Array2<f64>,
    /// `d_ff x d_model`
    pub w_out: Array2<f64>,
}

/// Weights of one transformer block. One query/key/value projection per head.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Per head, `d_model x d_k`.
    pub w_q: Vec<Array2<f64>>,
    pub w_k: Vec<Array2<f64>>,
    /// Per head, `d_model x d_v`.
    pub w_v: Vec<Array2<f64>>,
    /// `d_model x d_model`; rows `h*d_v..(h+1)*d_v` read head `h`'s slot.
    pub w_o: Array2<f64>,
    pub mlp: Option<MlpWeights>,
}

impl LayerWeights {
    pub fn num_heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn random(config: &ModelConfig, rng: &mut SeededRng) -> Self {
        let d = config.d_model;
        let (dk, dv) = (config.d_k(), config.d_v());
        let std = 1.0 / (d as f64).sqrt();
        let h = config.num_heads;
        let w_q = (0..h).map(|_| rng.matrix(d, dk, std)).collect();
        let w_k = (0..h).map(|_| rng.matrix(d, dk, std)).collect();
        let w_v = (0..h).map(|_| rng.matrix(d, dv, std)).collect();
        let w_o = rng.matrix(d, d, std);
        let mlp = config.use_mlp.then(|| MlpWeights {
            norm_scale: Array1::ones(d),
            w_in: rng.matrix(d, config.d_ff, std),
            w_out: rng.matrix(config.d_ff, d, std),
        });
        Self {
            w_q,
            w_k,
            w_v,
            w_o,
            mlp,
        }
    }

    fn check(&self, config: &ModelConfig, layer: usize) -> Result<()> {
        let d = config.d_model;
        let shape = |what: &'static str, m: &Array2<f64>, r: usize, c: usize| -> Result<()> {
            if m.dim() != (r, c) {
                return Err(Error::Dimension {
                    what,
                    expected: (r, c),
                    got: m.dim(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    what,
                    layer: Some(layer + 1),
                    head: None,
                });
            }
            Ok(())
        };
        if self.w_q.len() != config.num_heads
            || self.w_k.len() != config.num_heads
            || self.w_v.len() != config.num_heads
        {
            return Err(Error::InvalidConfig(format!(
                "layer {} carries {} query projections for {} heads",
                layer + 1,
                self.w_q.len(),
                config.num_heads
            )));
        }
        for h in 0..config.num_heads {
            shape("W_Q", &self.w_q[h], d, config.d_k())?;
            shape("W_K", &self.w_k[h], d, config.d_k())?;
            shape("W_V", &self.w_v[h], d, config.d_v())?;
        }
        shape("W_O", &self.w_o, d, d)?;
        match (&self.mlp, config.use_mlp) {
            (Some(m), true) => {
                shape("W_in", &m.w_in, d, config.d_ff)?;
                shape("W_out", &m.w_out, config.d_ff, d)?;
                if m.norm_scale.len() != d || m.norm_scale.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig("bad norm scale".into()));
                }
            }
            (None, false) => {}
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "layer {} feed-forward weights disagree with use_mlp",
                    layer + 1
                )))
            }
        }
        Ok(())
    }
}

/// A complete model: embeddings, blocks and unembedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `vocab_size x d_model`
    pub token_embedding: Array2<f64>,
    /// Row 0 is added to vision positions, row 1 to text positions.
    pub modality_embedding: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    /// `d_model x vocab_size`
    pub unembedding: Array2<f64>,
}

impl Model {
    /// Draws a model from `seed`. Embeddings have unit standard deviation,
    /// every projection `1/sqrt(d_model)`.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let d = config.d_model;
        let token_embedding = rng.matrix(config.vocab_size, d, 1.0);
        let modality_embedding = rng.matrix(2, d, 1.0);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights::random(&config, &mut rng))
            .collect();
        let unembedding = rng.matrix(d, config.vocab_size, 1.0 / (d as f64).sqrt());
        Ok(Self {
            config,
            token_embedding,
            modality_embedding,
            layers,
            unembedding,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.layers.len() != c.num_layers {
            return Err(Error::InvalidConfig(format!(
                "{} layers stored for num_layers = {}",
                self.layers.len(),
                c.num_layers
            )));
        }
        let dims = [
            ("token embedding", self.token_embedding.dim(), (c.vocab_size, c.d_model)),
            ("modality embedding", self.modality_embedding.dim(), (2, c.d_model)),
            ("unembedding", self.unembedding.dim(), (c.d_model, c.vocab_size)),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        for (what, m) in [
            ("token embedding", &self.token_embedding),
            ("modality embedding", &self.modality_embedding),
            ("unembedding", &self.unembedding),
        ] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { what, layer: None, head: None });
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.check(c, l)?;
        }
        Ok(())
    }

    /// Total number of stored weights.
    pub fn num_parameters(&self) -> usize {
        let per_layer = |w: &LayerWeights| {
            let heads: usize = w.w_q.iter().chain(&w.w_k).chain(&w.w_v).map(|m| m.len()).sum();
            let mlp = w.mlp.as_ref().map_or(0, |m| m.norm_scale.len() + m.w_in.len() + m.w_out.len());
            heads + w.w_o.len() + mlp
        };
        self.token_embedding.len()
            + self.modality_embedding.len()
            + self.unembedding.len()
            + self.layers.iter().map(per_layer).sum::<usize>()
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.config.num_heads
    }
}
