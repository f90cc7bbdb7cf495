//! Desk-scale multimodal decoder with latent-space calibration.
//!
//! This crate implements a small vision-conditioned autoregressive decoder
//! together with two inference-time interventions that operate purely on
//! intermediate hidden states:
//!
//! - **SVC** (synergistic visual context injection): attention over a bank of
//!   original plus augmented vision tokens, blended into one middle layer to
//!   counteract the decay of visual attention over long generations.
//! - **CRC** (causal representation calibration): probe passes over
//!   token-pruned negative inputs distill a per-layer direction vector that
//!   is added, norm-preservingly, to the generating position's hidden state
//!   in every shallow layer.
//!
//! Around the decoder sit a synthetic scene generator with exact ground
//! truth, a diagnostics module that turns the motivating observations
//! (visual attention decay, augmentation complementarity, in-distribution
//! pruning) into measurable statistics, and an experiment harness with a
//! deterministic yes/no object-presence task.
//!
//! Everything is seeded and reproducible; see the guide in `book/` for a
//! chapter-by-chapter walkthrough. The `latentcal` binary exposes the
//! harness as a CLI (`gen-task`, `run`, `sweep`, `diagnose`, `report`).

#![forbid(unsafe_code)]

pub mod crc;
pub mod decoder;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod svc;
pub mod vision;

pub use error::{Error, ErrorCategory, Result};

// Book snippets double as doc-tests so the guide can never drift from the
// code. Each chapter compiles and runs under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(NumericCore, "../../../book/src/numeric-core.md");
    chapter!(SceneAndTokens, "../../../book/src/scenes-and-tokens.md");
    chapter!(ToyDecoder, "../../../book/src/toy-decoder.md");
    chapter!(VisualInjection, "../../../book/src/visual-injection.md");
    chapter!(RepresentationCalibration, "../../../book/src/representation-calibration.md");
    chapter!(Diagnostics, "../../../book/src/diagnostics.md");
    chapter!(HarnessAndCli, "../../../book/src/harness-and-cli.md");
}
