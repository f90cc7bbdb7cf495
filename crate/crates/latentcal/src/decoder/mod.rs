//! A small multimodal autoregressive decoder with per-layer hooks.
//!
//! Vision tokens form a prefix of the sequence, text tokens follow, and
//! causal self-attention runs over both. Every layer output can be
//! intercepted through a [`HookSet`]; an empty or identity hook set
//! reproduces the vanilla forward bit for bit. Generation is greedy and
//! fully deterministic given the weights and inputs.

mod config;
mod diagnostic;
mod forward;
mod hooks;
mod model;

pub use config::{DecoderConfig, TokenId};
pub use diagnostic::{
    build_linear_diagnostic, DiagnosticConfig, LayerProbe, LinearDiagnosticModel,
};
pub use forward::{
    argmax_token, forward_layer_states, forward_to_layer, greedy_decode, greedy_decode_recorded,
    next_token_logits, AttnRecorder, DecodeState,
};
pub use hooks::{FnHook, HookContext, HookSet, LayerHook};
pub use model::{DecoderModel, LayerWeights};
