//! Patch encoding and token-level degradation.
//!
//! [`PatchEncoder`] is a fixed seeded linear map from flattened patch pixels
//! to `d`-dimensional tokens; it is the only bridge from pixels to the
//! decoder. [`prune_tokens`] removes rows without touching the survivors
//! and keeps their source positions, which is what makes pruned streams
//! in-distribution probes: the surviving evidence is bit-identical to the
//! original, only the removed information is gone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix2D, Rng};
use crate::vision::scene::{SceneProvenance, SyntheticScene};

/// Where a token matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenProvenance {
    Original,
    Augmented,
    Pruned,
    MaskedImage,
}

impl std::fmt::Display for TokenProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TokenProvenance::Original => "original",
            TokenProvenance::Augmented => "augmented",
            TokenProvenance::Pruned => "pruned",
            TokenProvenance::MaskedImage => "masked-image",
        };
        f.write_str(s)
    }
}

/// Encoded vision tokens: one row per surviving patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionTokens {
    pub tokens: Matrix2D,
    pub provenance: TokenProvenance,
    /// Sequence position of each row in the source patch grid. Pruning
    /// keeps original positions, so downstream text positions never shift.
    positions: Vec<usize>,
    /// Token count of the unpruned source; text tokens start here.
    source_len: usize,
}

impl VisionTokens {
    /// Tokens at their natural positions `0..rows`.
    pub fn new(tokens: Matrix2D, provenance: TokenProvenance) -> Self {
        let positions = (0..tokens.rows()).collect();
        let source_len = tokens.rows();
        Self {
            tokens,
            provenance,
            positions,
            source_len,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Length of the unpruned source; the first text position.
    pub fn source_len(&self) -> usize {
        self.source_len
    }
}

/// Seeded linear patch encoder.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    patch: usize,
    dim: usize,
    seed: u64,
    weights: Matrix2D,
}

impl PatchEncoder {
    pub fn new(patch: usize, dim: usize, seed: u64) -> Self {
        let inputs = patch * patch * 3;
        let mut rng = Rng::from_seed(seed);
        // Scale so token norms land near sqrt(dim), comparable to the
        // decoder's unit-variance text embeddings.
        let std = (inputs as f64 * 0.3).sqrt().recip();
        let data: Vec<f64> = (0..inputs * dim).map(|_| rng.normal() * std).collect();
        let weights = Matrix2D::from_vec(inputs, dim, data).expect("encoder weights");
        Self {
            patch,
            dim,
            seed,
            weights,
        }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of tokens an image of the given size produces.
    pub fn token_count(&self, width: usize, height: usize) -> usize {
        (width / self.patch) * (height / self.patch)
    }

    /// Encode a scene into vision tokens, one per patch, row-major over the
    /// patch grid. Grid dimensions must divide evenly into patches.
    pub fn encode(&self, scene: &SyntheticScene) -> Result<VisionTokens> {
        if !scene.width.is_multiple_of(self.patch) || !scene.height.is_multiple_of(self.patch) {
            return Err(Error::InvalidConfig(format!(
                "grid {}x{} not divisible by patch {}",
                scene.width, scene.height, self.patch
            )));
        }
        let (px, py) = (scene.width / self.patch, scene.height / self.patch);
        let mut rows = Matrix2D::zeros(px * py, self.dim);
        let mut flat = vec![0.0f64; self.patch * self.patch * 3];
        for by in 0..py {
            for bx in 0..px {
                let mut i = 0;
                for y in by * self.patch..(by + 1) * self.patch {
                    for x in bx * self.patch..(bx + 1) * self.patch {
                        let p = scene.pixel(x, y);
                        flat[i] = p[0];
                        flat[i + 1] = p[1];
                        flat[i + 2] = p[2];
                        i += 3;
                    }
                }
                let token = Matrix2D::from_vec(1, flat.len(), flat.clone())?
                    .matmul(&self.weights)?;
                rows.set_row(by * px + bx, token.row(0))?;
            }
        }
        let provenance = match scene.provenance {
            SceneProvenance::Clean => TokenProvenance::Original,
            SceneProvenance::Augmented => TokenProvenance::Augmented,
            SceneProvenance::Masked => TokenProvenance::MaskedImage,
        };
        Ok(VisionTokens::new(rows, provenance))
    }
}

/// Keep `n_keep` rows sampled uniformly without replacement, preserving the
/// original relative order and source positions. Surviving rows are copied
/// bit for bit.
pub fn prune_tokens(v: &VisionTokens, n_keep: usize, rng: &mut Rng) -> Result<VisionTokens> {
    let n = v.len();
    if n_keep == 0 || n_keep > n {
        return Err(Error::PruneCount {
            n_keep,
            n_tokens: n,
        });
    }
    let idx = rng.sample_indices(n, n_keep);
    let mut out = Matrix2D::zeros(n_keep, v.dim());
    let mut positions = Vec::with_capacity(n_keep);
    for (r, &i) in idx.iter().enumerate() {
        out.set_row(r, v.tokens.row(i))?;
        positions.push(v.positions[i]);
    }
    Ok(VisionTokens {
        tokens: out,
        provenance: TokenProvenance::Pruned,
        positions,
        source_len: v.source_len,
    })
}
