//! Forward passes: prefill, incremental decoding, one-shot analysis runs.
//!
//! The sequence starts as `[vision tokens; query embeddings]` with sinusoidal
//! positions added. Each block is pre-norm: RMSNorm, causal multi-head
//! attention, residual, RMSNorm, GELU feed-forward, residual. Hooks run on
//! the rows a pass just produced at each layer; whatever they return feeds
//! the next layer and that is what gets cached, so cached and recomputed
//! paths see identical values.

use crate::decoder::config::TokenId;
use crate::decoder::hooks::{HookContext, HookSet};
use crate::decoder::model::DecoderModel;
use crate::error::{Error, Result};
use crate::numeric::{Matrix2D, Vec1D};
use crate::vision::VisionTokens;

const RMS_EPSILON: f64 = 1e-6;

fn rms_normalize_rows(m: &Matrix2D) -> Matrix2D {
    let mut out = m.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().fold(0.0, |acc, &x| acc + x * x) / cols as f64;
        let inv = (ms + RMS_EPSILON).sqrt().recip();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

/// Records head-averaged attention mass on vision columns at one layer.
#[derive(Debug, Clone)]
pub struct AttnRecorder {
    /// 1-based layer to observe.
    pub layer: usize,
    /// `(position, vision_mass)` for every row processed at that layer.
    pub masses: Vec<(usize, f64)>,
}

impl AttnRecorder {
    pub fn at_layer(layer: usize) -> Self {
        Self {
            layer,
            masses: Vec::new(),
        }
    }
}

/// Mutable decoding state: growing per-layer sequences plus the KV cache.
pub struct DecodeState {
    n_vision: usize,
    n_query: usize,
    /// First text position: the unpruned vision length. Pruned streams keep
    /// original token positions, so text positions never shift.
    text_position_base: usize,
    generated: Vec<TokenId>,
    step: usize,
    prefilled: bool,
    /// `layer_seq[0]` is the input embedding sequence; `layer_seq[l]` is the
    /// post-hook output of layer `l`. All grow row-wise as decoding proceeds.
    layer_seq: Vec<Matrix2D>,
    /// Cached keys and values per layer, one row per processed position.
    kv: Vec<(Matrix2D, Matrix2D)>,
}

impl DecodeState {
    pub fn new(model: &DecoderModel, vision: &VisionTokens, query: &[TokenId]) -> Result<Self> {
        let cfg = model.config();
        let d = cfg.hidden_dim;
        if vision.dim() != d {
            return Err(Error::ShapeMismatch {
                op: "DecodeState::new",
                lhs_rows: vision.len(),
                lhs_cols: vision.dim(),
                rhs_rows: 1,
                rhs_cols: d,
            });
        }
        if query.is_empty() {
            return Err(Error::EmptyInput("DecodeState::new query"));
        }
        let n_vision = vision.len();
        let n_query = query.len();
        let text_position_base = vision.source_len();
        let total = n_vision + n_query;
        if text_position_base + n_query > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: text_position_base + n_query,
                max_seq: cfg.max_seq,
            });
        }

        let mut embeds = Matrix2D::zeros(total, d);
        for r in 0..n_vision {
            embeds.set_row(r, vision.tokens.row(r))?;
            let pe = model.position_encoding(vision.positions()[r]);
            let row = embeds.row_mut(r);
            for (v, p) in row.iter_mut().zip(&pe) {
                *v += p;
            }
        }
        for (i, &tok) in query.iter().enumerate() {
            embeds.set_row(n_vision + i, model.embed_token(tok)?)?;
            let pe = model.position_encoding(text_position_base + i);
            let row = embeds.row_mut(n_vision + i);
            for (v, p) in row.iter_mut().zip(&pe) {
                *v += p;
            }
        }

        let mut layer_seq = Vec::with_capacity(cfg.num_layers + 1);
        layer_seq.push(embeds);
        for _ in 0..cfg.num_layers {
            layer_seq.push(Matrix2D::zeros(0, d));
        }
        let kv = (0..cfg.num_layers)
            .map(|_| (Matrix2D::zeros(0, d), Matrix2D::zeros(0, d)))
            .collect();
        Ok(Self {
            n_vision,
            n_query,
            text_position_base,
            generated: Vec::new(),
            step: 0,
            prefilled: false,
            layer_seq,
            kv,
        })
    }

    pub fn n_vision(&self) -> usize {
        self.n_vision
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn context_len(&self) -> usize {
        self.n_vision + self.n_query
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.generated
    }

    /// Current generation step (0 until the prefill has run).
    pub fn step(&self) -> usize {
        self.step
    }

    /// Post-hook hidden sequence at a 1-based layer (0 = input embeddings).
    pub fn hidden_sequence(&self, layer: usize) -> &Matrix2D {
        &self.layer_seq[layer]
    }

    /// Process the initial context (generation step 0).
    pub fn prefill(&mut self, model: &DecoderModel, hooks: &HookSet) -> Result<()> {
        self.prefill_recorded(model, hooks, None)
    }

    pub fn prefill_recorded(
        &mut self,
        model: &DecoderModel,
        hooks: &HookSet,
        recorder: Option<&mut AttnRecorder>,
    ) -> Result<()> {
        assert!(!self.prefilled, "prefill ran twice");
        check_hook_layers(model, hooks)?;
        let rows = self.layer_seq[0].clone();
        self.run_rows(model, hooks, rows, 0, recorder)?;
        self.prefilled = true;
        Ok(())
    }

    /// Feed one generated token; generation step advances to `t + 1`.
    pub fn advance(&mut self, model: &DecoderModel, token: TokenId, hooks: &HookSet) -> Result<()> {
        self.advance_recorded(model, hooks, token, None)
    }

    pub fn advance_recorded(
        &mut self,
        model: &DecoderModel,
        hooks: &HookSet,
        token: TokenId,
        recorder: Option<&mut AttnRecorder>,
    ) -> Result<()> {
        assert!(self.prefilled, "advance before prefill");
        let pos = self.text_position_base + self.n_query + self.generated.len();
        if pos + 1 > model.config().max_seq {
            return Err(Error::SequenceTooLong {
                len: pos + 1,
                max_seq: model.config().max_seq,
            });
        }
        let d = model.config().hidden_dim;
        let mut row = Matrix2D::zeros(1, d);
        row.set_row(0, model.embed_token(token)?)?;
        {
            let pe = model.position_encoding(pos);
            let r = row.row_mut(0);
            for (v, p) in r.iter_mut().zip(&pe) {
                *v += p;
            }
        }
        self.generated.push(token);
        self.step += 1;
        let step = self.step;
        // The new embedding row joins the stored input sequence.
        self.layer_seq[0] = self.layer_seq[0].concat_rows(&row)?;
        self.run_rows(model, hooks, row, step, recorder)
    }

    /// Logits at the last processed position, prior bias included.
    pub fn current_logits(&self, model: &DecoderModel) -> Result<Vec1D> {
        assert!(self.prefilled, "logits before prefill");
        let last = self.layer_seq[model.config().num_layers].last_row();
        let normed = rms_normalize_rows(&Matrix2D::from_vec(1, last.len(), last.to_vec())?);
        model.project_logits(normed.row(0))
    }

    /// Run `new_rows` (already embedded, positions encoded) through every
    /// layer, applying hooks and growing the caches.
    fn run_rows(
        &mut self,
        model: &DecoderModel,
        hooks: &HookSet,
        new_rows: Matrix2D,
        step: usize,
        mut recorder: Option<&mut AttnRecorder>,
    ) -> Result<()> {
        let cfg = model.config();
        let first_position = self.kv[0].0.rows();
        let mut x = new_rows;
        for l in 0..cfg.num_layers {
            let layer_input = x.clone();
            let mut h = self.layer_forward(model, l, x, first_position, recorder.as_deref_mut())?;
            let ctx = HookContext {
                layer: l + 1,
                step,
                prev_output: &layer_input,
                n_vision: self.n_vision,
                first_position,
            };
            h = hooks.apply_at(&ctx, h)?;
            self.layer_seq[l + 1] = self.layer_seq[l + 1].concat_rows(&h)?;
            x = h;
        }
        Ok(())
    }

    // Row indices double as cache positions; indexed loops keep that
    // correspondence visible.
    #[allow(clippy::needless_range_loop)]
    fn layer_forward(
        &mut self,
        model: &DecoderModel,
        layer_idx: usize,
        x: Matrix2D,
        first_position: usize,
        recorder: Option<&mut AttnRecorder>,
    ) -> Result<Matrix2D> {
        let cfg = model.config();
        let (d, heads, hd) = (cfg.hidden_dim, cfg.num_heads, cfg.head_dim());
        let w = model.layer(layer_idx);

        let normed = rms_normalize_rows(&x);
        let q = normed.matmul(&w.wq)?;
        let k_new = normed.matmul(&w.wk)?;
        let v_new = normed.matmul(&w.wv)?;
        {
            let (k_cache, v_cache) = &mut self.kv[layer_idx];
            *k_cache = k_cache.concat_rows(&k_new)?;
            *v_cache = v_cache.concat_rows(&v_new)?;
        }
        let (k_all, v_all) = &self.kv[layer_idx];

        let scale = (hd as f64).sqrt().recip();
        let mut attn = Matrix2D::zeros(x.rows(), d);
        let mut row_masses = vec![0.0f64; x.rows()];
        for i in 0..x.rows() {
            let pos = first_position + i;
            let visible = pos + 1; // causal: attend to positions 0..=pos
            let q_row = q.row(i);
            for h in 0..heads {
                let q_h = &q_row[h * hd..(h + 1) * hd];
                let mut logits = Vec::with_capacity(visible);
                let mut max = f64::NEG_INFINITY;
                for j in 0..visible {
                    let k_h = &k_all.row(j)[h * hd..(h + 1) * hd];
                    let s = q_h
                        .iter()
                        .zip(k_h)
                        .fold(0.0, |acc, (&a, &b)| acc + a * b)
                        * scale;
                    if s > max {
                        max = s;
                    }
                    logits.push(s);
                }
                let mut sum = 0.0;
                for s in logits.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let inv = sum.recip();
                let out = attn.row_mut(i);
                for (j, &weight) in logits.iter().enumerate() {
                    let wgt = weight * inv;
                    if j < self.n_vision {
                        row_masses[i] += wgt / heads as f64;
                    }
                    let v_h = &v_all.row(j)[h * hd..(h + 1) * hd];
                    for (o, &v) in out[h * hd..(h + 1) * hd].iter_mut().zip(v_h) {
                        *o += wgt * v;
                    }
                }
            }
        }
        if let Some(rec) = recorder {
            if rec.layer == layer_idx + 1 {
                for (i, &m) in row_masses.iter().enumerate() {
                    rec.masses.push((first_position + i, m));
                }
            }
        }

        let x = x.add(&attn.matmul(&w.wo)?)?;

        let normed2 = rms_normalize_rows(&x);
        let mut up = normed2.matmul(&w.w1)?;
        for v in 0..up.rows() {
            for c in up.row_mut(v).iter_mut() {
                *c = gelu(*c);
            }
        }
        x.add(&up.matmul(&w.w2)?)
    }
}

fn check_hook_layers(model: &DecoderModel, hooks: &HookSet) -> Result<()> {
    if let Some(max) = hooks.max_layer() {
        let num_layers = model.config().num_layers;
        if max == 0 || max > num_layers {
            return Err(Error::LayerOutOfRange {
                layer: max,
                num_layers,
            });
        }
    }
    Ok(())
}

/// Argmax with ties broken toward the lowest token id.
pub fn argmax_token(logits: &Vec1D) -> TokenId {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in logits.data().iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Logits over the vocabulary at the final position of `state`, running the
/// prefill first if it has not happened yet.
pub fn next_token_logits(
    model: &DecoderModel,
    state: &mut DecodeState,
    hooks: &HookSet,
) -> Result<Vec1D> {
    if !state.prefilled {
        state.prefill(model, hooks)?;
    }
    state.current_logits(model)
}

/// Deterministic greedy decoding: argmax at every step, ties to the lowest
/// id, stopping at `max_new` tokens or the configured end token.
pub fn greedy_decode(
    model: &DecoderModel,
    vision: &VisionTokens,
    query: &[TokenId],
    hooks: &HookSet,
    max_new: usize,
) -> Result<Vec<TokenId>> {
    greedy_decode_recorded(model, vision, query, hooks, max_new, None)
}

pub fn greedy_decode_recorded(
    model: &DecoderModel,
    vision: &VisionTokens,
    query: &[TokenId],
    hooks: &HookSet,
    max_new: usize,
    mut recorder: Option<&mut AttnRecorder>,
) -> Result<Vec<TokenId>> {
    assert!(max_new >= 1, "max_new must be at least 1");
    let mut state = DecodeState::new(model, vision, query)?;
    state.prefill_recorded(model, hooks, recorder.as_deref_mut())?;
    let mut tokens = Vec::with_capacity(max_new);
    loop {
        let logits = state.current_logits(model)?;
        let token = argmax_token(&logits);
        tokens.push(token);
        if tokens.len() == max_new || model.config().eos_token == Some(token) {
            break;
        }
        state.advance_recorded(model, hooks, token, recorder.as_deref_mut())?;
    }
    Ok(tokens)
}

/// One-shot forward over a full sequence, stopping at `layer` (1-based) and
/// returning its post-hook hidden sequence. Equivalent to the incremental
/// path at generation step 0.
pub fn forward_to_layer(
    model: &DecoderModel,
    vision: &VisionTokens,
    query: &[TokenId],
    layer: usize,
    hooks: &HookSet,
) -> Result<Matrix2D> {
    let states = forward_layer_states(model, vision, query, layer, hooks)?;
    Ok(states.into_iter().last().expect("layer >= 1"))
}

/// One-shot forward capturing the post-hook hidden sequence of every layer
/// `1..=l_max`.
pub fn forward_layer_states(
    model: &DecoderModel,
    vision: &VisionTokens,
    query: &[TokenId],
    l_max: usize,
    hooks: &HookSet,
) -> Result<Vec<Matrix2D>> {
    let num_layers = model.config().num_layers;
    if l_max == 0 || l_max > num_layers {
        return Err(Error::LayerOutOfRange {
            layer: l_max,
            num_layers,
        });
    }
    check_hook_layers(model, hooks)?;
    let mut state = DecodeState::new(model, vision, query)?;
    let rows = state.layer_seq[0].clone();
    let mut x = rows;
    let mut outputs = Vec::with_capacity(l_max);
    for l in 0..l_max {
        let layer_input = x.clone();
        let h = state.layer_forward(model, l, x, 0, None)?;
        let ctx = HookContext {
            layer: l + 1,
            step: 0,
            prev_output: &layer_input,
            n_vision: state.n_vision,
            first_position: 0,
        };
        let h = hooks.apply_at(&ctx, h)?;
        outputs.push(h.clone());
        x = h;
    }
    Ok(outputs)
}
