//! Causal representation calibration (CRC).
//!
//! Negative inputs are made by randomly pruning the vision tokens down to a
//! handful of survivors. At generation step 0 the model runs hook-free over
//! the original and each negative context; the per-layer difference of the
//! probe-position hidden states, averaged over negatives, is the direction
//! along which visual information expresses itself at that layer:
//!
//! ```text
//! delta(l, k) = H_org(l) - H_neg(l, k)
//! v(l)        = mean_k delta(l, k)
//! ```
//!
//! The resulting [`ProbeCache`] is computed once and reused. At every later
//! step the generating position's hidden state is nudged toward the cached
//! direction in normalized space and rescaled to its original magnitude, so
//! calibration never changes representation norms:
//!
//! ```text
//! h' = normalize(normalize(h) + lambda_c * normalize(v)) * |h|
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decoder::{HookContext, HookSet, LayerHook, LayerProbe, TokenId};
use crate::error::{Error, Result};
use crate::numeric::{mean_rows, Matrix2D, Rng, Vec1D, NORM_EPSILON};
use crate::vision::{prune_tokens, VisionTokens};

/// Which hidden row(s) of a probe pass feed the difference. The original and
/// negative streams have different lengths, so only positions with matching
/// semantics qualify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ProbePosition {
    /// Final sequence position: the state that predicts the first token.
    #[default]
    FinalPosition,
    /// Mean over the query-token positions.
    QueryMean,
}

/// Hyperparameters shared by both intervention modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    /// Intervention layer: SVC injects here, CRC calibrates layers `1..=l_c`.
    pub l_c: usize,
    /// SVC interpolation weight in `[0, 1]`.
    pub lambda_s: f64,
    /// CRC calibration strength (nonnegative).
    pub lambda_c: f64,
    /// Number of negative samples.
    pub k: usize,
    /// Vision tokens retained per negative sample.
    pub n_h: usize,
    /// Seed for augmentation, pruning, and masking substreams.
    pub seed: u64,
    /// Whether the SVC blend also covers the step-0 prefill positions.
    pub svc_prefill: bool,
    /// Blend into the intervention layer's input instead of its output.
    pub svc_blend_input: bool,
    /// Subtract the cached direction instead of adding it.
    pub crc_flip_sign: bool,
    /// Position choice for the probe difference.
    pub probe_position: ProbePosition,
}

/// Reference defaults at full model scale (32 layers, 576 vision tokens).
const FULL_SCALE_LAYERS: usize = 32;
const FULL_SCALE_VISION_TOKENS: usize = 576;
const FULL_SCALE_L_C: usize = 16;
const FULL_SCALE_N_H: usize = 5;
const DEFAULT_LAMBDA_S: f64 = 0.06;
const DEFAULT_LAMBDA_C: f64 = 0.1;
const DEFAULT_K: usize = 3;

impl CalibConfig {
    /// The reference operating point at full model scale.
    pub fn full_scale() -> Self {
        Self {
            l_c: FULL_SCALE_L_C,
            lambda_s: DEFAULT_LAMBDA_S,
            lambda_c: DEFAULT_LAMBDA_C,
            k: DEFAULT_K,
            n_h: FULL_SCALE_N_H,
            seed: 0,
            svc_prefill: true,
            svc_blend_input: false,
            crc_flip_sign: false,
            probe_position: ProbePosition::FinalPosition,
        }
    }

    /// Scale the reference defaults to a smaller model: the intervention
    /// layer keeps its midpoint proportion (`l_c = num_layers / 2`) and the
    /// retained-token count keeps its proportion of the vision prefix
    /// (`ceil(5 * n_vision / 576)`, at least 1).
    pub fn scaled_to(num_layers: usize, n_vision: usize) -> Self {
        let l_c = (num_layers * FULL_SCALE_L_C / FULL_SCALE_LAYERS).max(1);
        let n_h = (FULL_SCALE_N_H * n_vision)
            .div_ceil(FULL_SCALE_VISION_TOKENS)
            .max(1);
        Self {
            l_c,
            n_h,
            ..Self::full_scale()
        }
    }

    /// Reference hyperparameters at the default toy shape: the intervention
    /// layer keeps its midpoint proportion, everything else keeps the
    /// reference values.
    pub fn toy_default() -> Self {
        Self {
            l_c: 4,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self, num_layers: usize, n_vision: usize) -> Result<()> {
        if self.l_c == 0 || self.l_c > num_layers {
            return Err(Error::InvalidConfig(format!(
                "l_c {} outside 1..={}",
                self.l_c, num_layers
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_s) {
            return Err(Error::InvalidConfig(format!(
                "lambda_s {} outside [0, 1]",
                self.lambda_s
            )));
        }
        if self.lambda_c < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_c {} must be nonnegative",
                self.lambda_c
            )));
        }
        if self.lambda_c > 0.0 {
            if self.k == 0 {
                return Err(Error::InvalidConfig(
                    "k must be at least 1 when lambda_c > 0".into(),
                ));
            }
            if self.n_h == 0 || self.n_h >= n_vision {
                return Err(Error::InvalidConfig(format!(
                    "n_h {} outside 1..{n_vision}",
                    self.n_h
                )));
            }
        }
        Ok(())
    }
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self::toy_default()
    }
}

/// Per-layer calibration directions, computed once at step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCache {
    /// `vectors[l - 1]` is the direction for layer `l`.
    vectors: Vec<Vec1D>,
    pub k: usize,
    pub n_h: usize,
    /// Step the cache was created at; always 0.
    pub created_step: usize,
}

impl ProbeCache {
    pub fn layer_count(&self) -> usize {
        self.vectors.len()
    }

    pub fn direction(&self, layer: usize) -> &Vec1D {
        &self.vectors[layer - 1]
    }

    pub fn vectors(&self) -> &[Vec1D] {
        &self.vectors
    }

    /// Persist alongside the fingerprint of the configuration that made it.
    pub fn save(&self, path: &Path, config_fingerprint: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Artifact<'a> {
            config_fingerprint: &'a str,
            cache: &'a ProbeCache,
        }
        let text = serde_json::to_string_pretty(&Artifact {
            config_fingerprint,
            cache: self,
        })?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Load a saved cache, optionally checking the recorded fingerprint.
    pub fn load(path: &Path, expect_fingerprint: Option<&str>) -> Result<ProbeCache> {
        #[derive(Deserialize)]
        struct Artifact {
            config_fingerprint: String,
            cache: ProbeCache,
        }
        let artifact: Artifact = serde_json::from_str(&fs::read_to_string(path)?)?;
        if let Some(expected) = expect_fingerprint {
            if artifact.config_fingerprint != expected {
                return Err(Error::FingerprintMismatch {
                    recorded: artifact.config_fingerprint,
                    computed: expected.to_string(),
                });
            }
        }
        Ok(artifact.cache)
    }
}

/// Build `k` independently pruned variants of `v`, each keeping `n_h` rows.
/// Every sample draws from its own substream of `rng`, in order.
pub fn make_negatives(
    v: &VisionTokens,
    k: usize,
    n_h: usize,
    rng: &mut Rng,
) -> Result<Vec<VisionTokens>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    (0..k)
        .map(|_| {
            let mut sub = rng.fork();
            prune_tokens(v, n_h, &mut sub)
        })
        .collect()
}

/// Run hook-free probe passes for the original context and every negative,
/// and average the per-layer probe-position differences in sample order.
pub fn probe_directions<P: LayerProbe>(
    subject: &P,
    vision: &VisionTokens,
    query: &[TokenId],
    negatives: &[VisionTokens],
    l_c: usize,
    position: ProbePosition,
) -> Result<ProbeCache> {
    if negatives.is_empty() {
        return Err(Error::EmptyInput("probe_directions negatives"));
    }
    let org = probe_states(subject, vision, query, l_c, position)?;
    let mut per_layer_deltas: Vec<Vec<Vec1D>> = vec![Vec::with_capacity(negatives.len()); l_c];
    for neg in negatives {
        let neg_states = probe_states(subject, neg, query, l_c, position)?;
        for (l, (o, n)) in org.iter().zip(&neg_states).enumerate() {
            per_layer_deltas[l].push(o.sub(n)?);
        }
    }
    let vectors = per_layer_deltas
        .iter()
        .map(|deltas| mean_rows(deltas))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeCache {
        vectors,
        k: negatives.len(),
        n_h: negatives
            .first()
            .map(|n| n.len())
            .unwrap_or_default(),
        created_step: 0,
    })
}

fn probe_states<P: LayerProbe>(
    subject: &P,
    vision: &VisionTokens,
    query: &[TokenId],
    l_c: usize,
    position: ProbePosition,
) -> Result<Vec<Vec1D>> {
    match position {
        ProbePosition::FinalPosition => subject.probe_layer_states(vision, query, l_c),
        ProbePosition::QueryMean => subject.probe_layer_query_mean(vision, query, l_c),
    }
}

/// Norm-preserving nudge of `h_org` toward `v_crc`.
///
/// Degenerate directions make the calibration a no-op rather than an error:
/// a zero `v_crc` legitimately occurs when every negative equals the
/// original. A near-zero combined vector (anti-parallel cancellation) also
/// falls back to the input, with a warning.
pub fn calibrate_state(h_org: &Vec1D, v_crc: &Vec1D, lambda_c: f64) -> Result<Vec1D> {
    if lambda_c == 0.0 {
        return Ok(h_org.clone());
    }
    let magnitude = h_org.norm();
    if magnitude <= NORM_EPSILON {
        return Err(Error::DegenerateVector { norm: magnitude });
    }
    let v_norm = match v_crc.l2_normalized() {
        Ok(u) => u,
        Err(_) => return Ok(h_org.clone()),
    };
    let h_norm = h_org.scale(magnitude.recip());
    let h_crc = h_norm.add(&v_norm.scale(lambda_c))?;
    let combined = h_crc.norm();
    if combined <= NORM_EPSILON {
        log::warn!("calibration cancelled the state; leaving it unchanged");
        return Ok(h_org.clone());
    }
    h_crc
        .scale(magnitude / combined)
        .l2_normalized()
        .map(|u| u.scale(magnitude))
}

/// Calibration hook for one layer: rewrites the last row at steps `t > 0`.
pub struct CrcHook {
    layer: usize,
    direction: Vec1D,
    lambda_c: f64,
}

impl LayerHook for CrcHook {
    fn name(&self) -> &str {
        "crc"
    }

    fn apply(&self, ctx: &HookContext<'_>, mut hidden: Matrix2D) -> Result<Matrix2D> {
        if ctx.layer != self.layer || self.lambda_c == 0.0 || ctx.step == 0 {
            return Ok(hidden);
        }
        let last = hidden.rows() - 1;
        let calibrated = calibrate_state(&hidden.row_vec(last), &self.direction, self.lambda_c)?;
        hidden.set_row(last, calibrated.data())?;
        Ok(hidden)
    }
}

/// Register one calibration hook per layer `1..=l_c`.
pub fn register_crc(hooks: &mut HookSet, cache: &ProbeCache, config: &CalibConfig) -> Result<()> {
    if cache.layer_count() != config.l_c {
        return Err(Error::CacheLayerMismatch {
            cache_layers: cache.layer_count(),
            config_layers: config.l_c,
        });
    }
    if config.lambda_c == 0.0 {
        return Ok(());
    }
    let sign = if config.crc_flip_sign { -1.0 } else { 1.0 };
    for layer in 1..=config.l_c {
        hooks.register(
            layer,
            Arc::new(CrcHook {
                layer,
                direction: cache.direction(layer).scale(sign),
                lambda_c: config.lambda_c,
            }),
        );
    }
    Ok(())
}
