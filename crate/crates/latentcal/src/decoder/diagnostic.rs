//! Analytically decomposable reference model.
//!
//! [`LinearDiagnosticModel`] produces, for each layer, a probe-position
//! hidden state that is exactly a visual effect plus a shared effect:
//! the visual part is a sum-pooled linear map of the vision tokens, the
//! shared part depends only on the query (and an arbitrary constant offset
//! standing in for intrinsic bias). Because the decomposition is exact by
//! construction, differences of hidden states across visual inputs isolate
//! the visual term to machine precision, which is what the calibration
//! probe is supposed to recover.

use crate::decoder::config::TokenId;
use crate::decoder::forward::forward_layer_states;
use crate::decoder::hooks::HookSet;
use crate::decoder::model::DecoderModel;
use crate::error::{Error, Result};
use crate::numeric::{Matrix2D, Rng, Vec1D};
use crate::vision::VisionTokens;

/// Anything that can expose per-layer probe states for a `[vision; query]`
/// context at generation step 0, with no hooks active.
pub trait LayerProbe {
    /// Last-position hidden state of each layer `1..=l_max`.
    fn probe_layer_states(
        &self,
        vision: &VisionTokens,
        query: &[TokenId],
        l_max: usize,
    ) -> Result<Vec<Vec1D>>;

    /// Mean hidden state over the query positions of each layer `1..=l_max`.
    fn probe_layer_query_mean(
        &self,
        vision: &VisionTokens,
        query: &[TokenId],
        l_max: usize,
    ) -> Result<Vec<Vec1D>>;
}

impl LayerProbe for DecoderModel {
    fn probe_layer_states(
        &self,
        vision: &VisionTokens,
        query: &[TokenId],
        l_max: usize,
    ) -> Result<Vec<Vec1D>> {
        let states = forward_layer_states(self, vision, query, l_max, &HookSet::new())?;
        Ok(states
            .iter()
            .map(|m| Vec1D::new(m.last_row().to_vec()))
            .collect())
    }

    fn probe_layer_query_mean(
        &self,
        vision: &VisionTokens,
        query: &[TokenId],
        l_max: usize,
    ) -> Result<Vec<Vec1D>> {
        let states = forward_layer_states(self, vision, query, l_max, &HookSet::new())?;
        let lo = vision.len();
        let hi = lo + query.len();
        states
            .iter()
            .map(|m| {
                let rows: Vec<Vec1D> = (lo..hi).map(|r| m.row_vec(r)).collect();
                crate::numeric::mean_rows(&rows)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiagnosticConfig {
    pub dim: usize,
    pub layers: usize,
    pub vocab_size: usize,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            layers: 4,
            vocab_size: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearDiagnosticModel {
    dim: usize,
    layers: usize,
    /// Per-layer visual effect map applied to the sum-pooled vision tokens.
    visual_maps: Vec<Matrix2D>,
    /// Per-layer map applied to the sum-pooled query embedding.
    shared_maps: Vec<Matrix2D>,
    /// Per-layer constant shared offset (the intrinsic-bias knob).
    shared_offsets: Vec<Vec1D>,
    /// Query token embedding table.
    query_embed: Matrix2D,
    readout: Matrix2D,
}

/// Construct a seeded diagnostic model whose probe-position hidden state at
/// layer `l` is exactly `visual_effect(l, V) + shared_effect(l, Q)`.
pub fn build_linear_diagnostic(config: &DiagnosticConfig, seed: u64) -> LinearDiagnosticModel {
    let mut rng = Rng::from_seed(seed);
    let d = config.dim;
    let std = (d as f64).sqrt().recip();
    let mut mat = |rows: usize, cols: usize| {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal() * std).collect();
        Matrix2D::from_vec(rows, cols, data).expect("diagnostic weights")
    };
    let visual_maps = (0..config.layers).map(|_| mat(d, d)).collect();
    let shared_maps = (0..config.layers).map(|_| mat(d, d)).collect();
    let query_embed = mat(config.vocab_size, d);
    let readout = mat(d, config.vocab_size);
    LinearDiagnosticModel {
        dim: d,
        layers: config.layers,
        visual_maps,
        shared_maps,
        shared_offsets: vec![Vec1D::zeros(d); config.layers],
        query_embed,
        readout,
    }
}

impl LinearDiagnosticModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn visual_map(&self, layer: usize) -> &Matrix2D {
        &self.visual_maps[layer - 1]
    }

    /// Shift every layer's shared effect by a constant vector. The visual
    /// term is untouched, so probe differences must not change.
    pub fn with_shared_offset(mut self, offset: &Vec1D) -> Result<Self> {
        for o in self.shared_offsets.iter_mut() {
            *o = o.add(offset)?;
        }
        Ok(self)
    }

    fn sum_pool(tokens: &Matrix2D) -> Vec1D {
        let mut acc = Vec1D::zeros(tokens.cols());
        for r in 0..tokens.rows() {
            for (a, &b) in acc.data_mut().iter_mut().zip(tokens.row(r)) {
                *a += b;
            }
        }
        acc
    }

    /// `E_visual(layer, V)`: sum-pooled tokens through the layer's map.
    pub fn visual_effect(&self, layer: usize, vision: &VisionTokens) -> Result<Vec1D> {
        let pooled = Self::sum_pool(&vision.tokens);
        let row = Matrix2D::from_vec(1, pooled.dim(), pooled.data().to_vec())?;
        Ok(row.matmul(&self.visual_maps[layer - 1])?.row_vec(0))
    }

    /// `E_shared(layer, Q)`: sum-pooled query embedding through the layer's
    /// map, plus the constant offset.
    pub fn shared_effect(&self, layer: usize, query: &[TokenId]) -> Result<Vec1D> {
        let mut pooled = Vec1D::zeros(self.dim);
        for &tok in query {
            if tok >= self.query_embed.rows() {
                return Err(Error::TokenOutOfRange {
                    token: tok,
                    vocab_size: self.query_embed.rows(),
                });
            }
            for (a, &b) in pooled.data_mut().iter_mut().zip(self.query_embed.row(tok)) {
                *a += b;
            }
        }
        let row = Matrix2D::from_vec(1, pooled.dim(), pooled.data().to_vec())?;
        row.matmul(&self.shared_maps[layer - 1])?
            .row_vec(0)
            .add(&self.shared_offsets[layer - 1])
    }

    /// Probe-position hidden state: exactly visual plus shared.
    pub fn hidden(&self, layer: usize, vision: &VisionTokens, query: &[TokenId]) -> Result<Vec1D> {
        self.visual_effect(layer, vision)?
            .add(&self.shared_effect(layer, query)?)
    }

    pub fn readout_logits(&self, hidden: &Vec1D) -> Result<Vec1D> {
        let row = Matrix2D::from_vec(1, hidden.dim(), hidden.data().to_vec())?;
        Ok(row.matmul(&self.readout)?.row_vec(0))
    }
}

impl LayerProbe for LinearDiagnosticModel {
    fn probe_layer_states(
        &self,
        vision: &VisionTokens,
        query: &[TokenId],
        l_max: usize,
    ) -> Result<Vec<Vec1D>> {
        if l_max == 0 || l_max > self.layers {
            return Err(Error::LayerOutOfRange {
                layer: l_max,
                num_layers: self.layers,
            });
        }
        (1..=l_max).map(|l| self.hidden(l, vision, query)).collect()
    }

    // The analytic model has a single abstract probe position.
    fn probe_layer_query_mean(
        &self,
        vision: &VisionTokens,
        query: &[TokenId],
        l_max: usize,
    ) -> Result<Vec<Vec1D>> {
        self.probe_layer_states(vision, query, l_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::TokenProvenance;

    fn random_tokens(rng: &mut Rng, n: usize, d: usize) -> VisionTokens {
        let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        VisionTokens::new(
            Matrix2D::from_vec(n, d, data).unwrap(),
            TokenProvenance::Original,
        )
    }

    #[test]
    fn hidden_difference_is_purely_visual() {
        let model = build_linear_diagnostic(&DiagnosticConfig::default(), 5);
        let mut rng = Rng::from_seed(9);
        let v = random_tokens(&mut rng, 6, model.dim());
        let v_neg = random_tokens(&mut rng, 3, model.dim());
        let query = vec![1, 4, 7];
        for layer in 1..=model.layers() {
            let diff = model
                .hidden(layer, &v, &query)
                .unwrap()
                .sub(&model.hidden(layer, &v_neg, &query).unwrap())
                .unwrap();
            let oracle = model
                .visual_effect(layer, &v)
                .unwrap()
                .sub(&model.visual_effect(layer, &v_neg).unwrap())
                .unwrap();
            assert!(diff.max_abs_diff(&oracle).unwrap() < 1e-12);
        }
    }

    #[test]
    fn identical_inputs_give_zero_difference() {
        let model = build_linear_diagnostic(&DiagnosticConfig::default(), 5);
        let mut rng = Rng::from_seed(2);
        let v = random_tokens(&mut rng, 4, model.dim());
        let query = vec![0, 3];
        let diff = model
            .hidden(2, &v, &query)
            .unwrap()
            .sub(&model.hidden(2, &v, &query).unwrap())
            .unwrap();
        assert!(diff.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn visual_effect_matches_handwritten_linear_map() {
        // Independent oracle: loop-based sum pool and matrix-vector product.
        let model = build_linear_diagnostic(&DiagnosticConfig::default(), 13);
        let mut rng = Rng::from_seed(4);
        let v = random_tokens(&mut rng, 5, model.dim());
        let layer = 3;
        let a = model.visual_map(layer);
        let d = model.dim();
        let mut pooled = vec![0.0; d];
        for r in 0..v.len() {
            for (i, &x) in v.tokens.row(r).iter().enumerate() {
                pooled[i] += x;
            }
        }
        let mut oracle = vec![0.0; d];
        for j in 0..d {
            for (i, &p) in pooled.iter().enumerate() {
                oracle[j] += p * a.get(i, j);
            }
        }
        let got = model.visual_effect(layer, &v).unwrap();
        for (g, o) in got.data().iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-12);
        }
    }
}
