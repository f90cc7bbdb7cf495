//! Decoder weights: seeded, never trained.
//!
//! Pre-norm transformer blocks (RMSNorm without gains, multi-head causal
//! attention, GELU feed-forward) with sinusoidal absolute positions added to
//! the input embeddings. All weights come from one seed; a model is fully
//! described by `(config, seed, prior_bias)` and the JSON dump round-trips
//! bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::numeric::{Matrix2D, Rng, Vec1D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Matrix2D,
    pub wk: Matrix2D,
    pub wv: Matrix2D,
    pub wo: Matrix2D,
    /// Feed-forward up projection, `d x 4d`.
    pub w1: Matrix2D,
    /// Feed-forward down projection, `4d x d`.
    pub w2: Matrix2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    config: DecoderConfig,
    seed: u64,
    layers: Vec<LayerWeights>,
    /// Token embedding table, `vocab x d`.
    embedding: Matrix2D,
    /// Output projection, `d x vocab`.
    output: Matrix2D,
    /// Added to the logits scaled by `prior_bias_strength`.
    prior_bias: Vec1D,
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix2D {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal() * std).collect();
    Matrix2D::from_vec(rows, cols, data).expect("gaussian matrix")
}

impl DecoderModel {
    /// Build a model from a validated config and a seed. The prior-bias
    /// vector starts at zero; see [`with_prior_bias`](Self::with_prior_bias).
    pub fn new(config: &DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut rng = Rng::from_seed(seed);
        let proj_std = (d as f64).sqrt().recip();
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                wq: gaussian_matrix(&mut rng, d, d, proj_std),
                wk: gaussian_matrix(&mut rng, d, d, proj_std),
                wv: gaussian_matrix(&mut rng, d, d, proj_std),
                wo: gaussian_matrix(&mut rng, d, d, proj_std),
                w1: gaussian_matrix(&mut rng, d, 4 * d, proj_std),
                w2: gaussian_matrix(&mut rng, 4 * d, d, (4.0 * d as f64).sqrt().recip()),
            })
            .collect();
        let embedding = gaussian_matrix(&mut rng, config.vocab_size, d, 1.0);
        let output = gaussian_matrix(&mut rng, d, config.vocab_size, proj_std);
        Ok(Self {
            config: config.clone(),
            seed,
            layers,
            embedding,
            output,
            prior_bias: Vec1D::zeros(config.vocab_size),
        })
    }

    /// Install a prior-bias logit vector (length `vocab_size`). The vector is
    /// added to every logit output scaled by `prior_bias_strength`.
    pub fn with_prior_bias(mut self, bias: Vec1D) -> Result<Self> {
        if bias.dim() != self.config.vocab_size {
            return Err(Error::ShapeMismatch {
                op: "with_prior_bias",
                lhs_rows: 1,
                lhs_cols: self.config.vocab_size,
                rhs_rows: 1,
                rhs_cols: bias.dim(),
            });
        }
        self.prior_bias = bias;
        Ok(self)
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer(&self, index: usize) -> &LayerWeights {
        &self.layers[index]
    }

    pub fn prior_bias(&self) -> &Vec1D {
        &self.prior_bias
    }

    pub fn embed_token(&self, token: usize) -> Result<&[f64]> {
        if token >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(self.embedding.row(token))
    }

    /// Final-norm hidden row to logits, including the scaled prior bias.
    pub fn project_logits(&self, hidden: &[f64]) -> Result<Vec1D> {
        let h = Matrix2D::from_vec(1, hidden.len(), hidden.to_vec())?;
        let raw = h.matmul(&self.output)?;
        let beta = self.config.prior_bias_strength;
        if beta == 0.0 {
            return Ok(raw.row_vec(0));
        }
        raw.row_vec(0).add(&self.prior_bias.scale(beta))
    }

    /// Sinusoidal position row added to the input embedding at `pos`.
    pub fn position_encoding(&self, pos: usize) -> Vec<f64> {
        let d = self.config.hidden_dim;
        let mut row = vec![0.0; d];
        for i in 0..d / 2 {
            let freq = 10_000f64.powf(-2.0 * i as f64 / d as f64);
            let angle = pos as f64 * freq;
            row[2 * i] = angle.sin();
            row[2 * i + 1] = angle.cos();
        }
        row
    }

    /// Serialize the full weight dump (config and seed embedded) to JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Load a weight dump. The round trip is bit-exact.
    pub fn load(path: &Path) -> Result<Self> {
        let model: DecoderModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        model.config.validate()?;
        Ok(model)
    }
}
