//! Synergistic visual context injection (SVC).
//!
//! Original and augmented vision tokens are stacked into a memory bank; a
//! single parameter-free scaled dot-product attention, queried by the hidden
//! sequence one layer below the intervention layer, produces a visual
//! context sequence that is interpolated into the intervention layer's
//! output:
//!
//! ```text
//! bank = [V; V_aug]
//! C    = softmax(H_prev bank^T / sqrt(d)) bank
//! H'   = (1 - lambda_s) H + lambda_s C
//! ```
//!
//! No learned projections anywhere: the bank rows serve directly as keys
//! and values.

use std::sync::Arc;

use crate::crc::CalibConfig;
use crate::decoder::{HookContext, HookSet, LayerHook};
use crate::error::{Error, Result};
use crate::numeric::Matrix2D;
use crate::vision::{TokenProvenance, VisionTokens};

/// Stacked original-plus-augmented vision tokens.
///
/// The first `n_original` rows are exactly the original tokens, the rest
/// exactly the augmented ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SynergyBank {
    tokens: Matrix2D,
    n_original: usize,
}

impl SynergyBank {
    pub fn tokens(&self) -> &Matrix2D {
        &self.tokens
    }

    pub fn n_original(&self) -> usize {
        self.n_original
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

    /// First block: the original tokens.
    pub fn original_block(&self) -> Matrix2D {
        self.tokens.slice_rows(0, self.n_original)
    }

    /// Second block: the augmented tokens.
    pub fn augmented_block(&self) -> Matrix2D {
        self.tokens.slice_rows(self.n_original, self.tokens.rows())
    }
}

/// Vertically concatenate original and augmented tokens, original first.
/// Provenance tags are enforced so banks cannot be built from the wrong
/// streams by accident.
pub fn build_bank(v: &VisionTokens, v_aug: &VisionTokens) -> Result<SynergyBank> {
    if v.provenance != TokenProvenance::Original {
        return Err(Error::Provenance {
            expected: TokenProvenance::Original.to_string(),
            got: v.provenance.to_string(),
        });
    }
    if v_aug.provenance != TokenProvenance::Augmented {
        return Err(Error::Provenance {
            expected: TokenProvenance::Augmented.to_string(),
            got: v_aug.provenance.to_string(),
        });
    }
    let tokens = v.tokens.concat_rows(&v_aug.tokens)?;
    Ok(SynergyBank {
        tokens,
        n_original: v.len(),
    })
}

/// Attention weights of each query row against a token matrix:
/// `softmax(h tokens^T / sqrt(d))`, one row per query row.
pub fn attention_weights(h: &Matrix2D, tokens: &Matrix2D) -> Result<Matrix2D> {
    if h.cols() != tokens.cols() {
        return Err(Error::ShapeMismatch {
            op: "attention_weights",
            lhs_rows: h.rows(),
            lhs_cols: h.cols(),
            rhs_rows: tokens.rows(),
            rhs_cols: tokens.cols(),
        });
    }
    let scale = (h.cols() as f64).sqrt().recip();
    let scores = h.matmul(&tokens.transpose())?.scale(scale);
    Ok(scores.softmax_rows())
}

/// Visual context: one convex combination of bank rows per query row.
pub fn visual_context(h_prev: &Matrix2D, bank: &SynergyBank) -> Result<Matrix2D> {
    let weights = attention_weights(h_prev, &bank.tokens)?;
    weights.matmul(&bank.tokens)
}

/// Interpolate `(1 - lambda) h + lambda c` elementwise.
pub fn blend(h: &Matrix2D, c: &Matrix2D, lambda: f64) -> Result<Matrix2D> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "blend factor {lambda} outside [0, 1]"
        )));
    }
    if h.rows() != c.rows() || h.cols() != c.cols() {
        return Err(Error::ShapeMismatch {
            op: "blend",
            lhs_rows: h.rows(),
            lhs_cols: h.cols(),
            rhs_rows: c.rows(),
            rhs_cols: c.cols(),
        });
    }
    h.scale(1.0 - lambda).add(&c.scale(lambda))
}

/// Post-layer hook computing the visual context from the layer input (the
/// preceding layer's output) and blending it into the layer output.
pub struct SvcHook {
    bank: SynergyBank,
    lambda_s: f64,
    layer: usize,
    include_prefill: bool,
}

impl SvcHook {
    pub fn new(bank: SynergyBank, lambda_s: f64, layer: usize, include_prefill: bool) -> Self {
        Self {
            bank,
            lambda_s,
            layer,
            include_prefill,
        }
    }

    /// Layer this hook should be registered at.
    pub fn layer(&self) -> usize {
        self.layer
    }
}

impl LayerHook for SvcHook {
    fn name(&self) -> &str {
        "svc"
    }

    fn apply(&self, ctx: &HookContext<'_>, hidden: Matrix2D) -> Result<Matrix2D> {
        if ctx.layer != self.layer || self.lambda_s == 0.0 {
            return Ok(hidden);
        }
        if ctx.step == 0 && !self.include_prefill {
            return Ok(hidden);
        }
        let context = visual_context(ctx.prev_output, &self.bank)?;
        blend(&hidden, &context, self.lambda_s)
    }
}

/// Build the configured hook and register it. With `svc_blend_input` the
/// blend targets the intervention layer's input instead of its output, i.e.
/// the hook moves one layer down and queries with its own target.
pub fn register_svc(hooks: &mut HookSet, config: &CalibConfig, bank: SynergyBank) -> Result<()> {
    if config.lambda_s == 0.0 {
        return Ok(());
    }
    let layer = if config.svc_blend_input {
        if config.l_c < 2 {
            return Err(Error::InvalidConfig(
                "svc_blend_input requires the intervention layer to be at least 2".into(),
            ));
        }
        config.l_c - 1
    } else {
        config.l_c
    };
    let hook = if config.svc_blend_input {
        Arc::new(SvcInputHook {
            bank,
            lambda_s: config.lambda_s,
            layer,
            include_prefill: config.svc_prefill,
        }) as Arc<dyn LayerHook>
    } else {
        Arc::new(SvcHook::new(
            bank,
            config.lambda_s,
            layer,
            config.svc_prefill,
        )) as Arc<dyn LayerHook>
    };
    hooks.register(layer, hook);
    Ok(())
}

/// Pre-layer variant: queries with and blends into the intervention layer's
/// input, so the layer's own attention sees the enriched states.
struct SvcInputHook {
    bank: SynergyBank,
    lambda_s: f64,
    layer: usize,
    include_prefill: bool,
}

impl LayerHook for SvcInputHook {
    fn name(&self) -> &str {
        "svc-input"
    }

    fn apply(&self, ctx: &HookContext<'_>, hidden: Matrix2D) -> Result<Matrix2D> {
        if ctx.layer != self.layer || self.lambda_s == 0.0 {
            return Ok(hidden);
        }
        if ctx.step == 0 && !self.include_prefill {
            return Ok(hidden);
        }
        let context = visual_context(&hidden, &self.bank)?;
        blend(&hidden, &context, self.lambda_s)
    }
}
