//! Post-layer intervention hooks.
//!
//! A hook observes the hidden rows a forward pass just computed at its layer
//! and returns replacement rows of the same shape. Hooks run after the layer
//! finishes, in registration order within a layer, ascending across layers.
//! The engine passes each hook the rows the previous layer produced in the
//! same pass (the layer's own input), which is all the state the built-in
//! interventions need; hooks themselves stay pure and shareable across
//! concurrent decodes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::Matrix2D;

/// Context handed to a hook alongside the rows it may modify.
pub struct HookContext<'a> {
    /// 1-based layer whose output is being hooked.
    pub layer: usize,
    /// Generation step: 0 is the prefill over the initial context, step `t`
    /// processes the token generated at step `t - 1`.
    pub step: usize,
    /// Rows the previous layer produced in this pass (the embeddings for
    /// layer 1), after that layer's own hooks.
    pub prev_output: &'a Matrix2D,
    /// Number of vision tokens at the front of the full sequence.
    pub n_vision: usize,
    /// Sequence position of the first row in the hooked matrix.
    pub first_position: usize,
}

/// A post-layer intervention.
pub trait LayerHook: Send + Sync {
    /// Name used in error messages.
    fn name(&self) -> &str;

    /// Transform the hidden rows. Must preserve the shape.
    fn apply(&self, ctx: &HookContext<'_>, hidden: Matrix2D) -> Result<Matrix2D>;
}

/// Hook built from a closure; mostly useful in tests.
pub struct FnHook<F> {
    name: String,
    f: F,
}

impl<F> FnHook<F>
where
    F: Fn(&HookContext<'_>, Matrix2D) -> Matrix2D + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> LayerHook for FnHook<F>
where
    F: Fn(&HookContext<'_>, Matrix2D) -> Matrix2D + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, ctx: &HookContext<'_>, hidden: Matrix2D) -> Result<Matrix2D> {
        Ok((self.f)(ctx, hidden))
    }
}

/// Ordered collection of hooks keyed by layer.
#[derive(Clone, Default)]
pub struct HookSet {
    entries: Vec<(usize, Arc<dyn LayerHook>)>,
}

impl HookSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a hook at a 1-based layer index.
    pub fn register(&mut self, layer: usize, hook: Arc<dyn LayerHook>) -> &mut Self {
        self.entries.push((layer, hook));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn hooks_at(&self, layer: usize) -> impl Iterator<Item = &Arc<dyn LayerHook>> {
        self.entries
            .iter()
            .filter(move |(l, _)| *l == layer)
            .map(|(_, h)| h)
    }

    pub fn max_layer(&self) -> Option<usize> {
        self.entries.iter().map(|(l, _)| *l).max()
    }

    /// Run every hook registered at `ctx.layer`, enforcing shape preservation.
    pub fn apply_at(&self, ctx: &HookContext<'_>, mut hidden: Matrix2D) -> Result<Matrix2D> {
        let (rows, cols) = (hidden.rows(), hidden.cols());
        for hook in self.hooks_at(ctx.layer) {
            hidden = hook.apply(ctx, hidden)?;
            if hidden.rows() != rows || hidden.cols() != cols {
                return Err(Error::HookShape {
                    hook: hook.name().to_string(),
                    expected_rows: rows,
                    expected_cols: cols,
                    got_rows: hidden.rows(),
                    got_cols: hidden.cols(),
                });
            }
        }
        Ok(hidden)
    }
}

impl std::fmt::Debug for HookSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<String> = self
            .entries
            .iter()
            .map(|(l, h)| format!("{}@{}", h.name(), l))
            .collect();
        f.debug_struct("HookSet").field("hooks", &names).finish()
    }
}
