//! Running a task through a pipeline and scoring it.
//!
//! Answers are two-way logit comparisons: after `answer_step` generation
//! steps the yes-token and no-token logits are compared directly, so the
//! emitted answer is always one of the two designated ids and no parsing is
//! involved. Step 0 is the probe step; the default `answer_step = 1` reads
//! the answer from the first calibrated step.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decoder::{argmax_token, DecodeState, DecoderModel, HookSet, TokenId};
use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::pipeline::{assemble_pipeline, Pipeline};
use crate::harness::task::{question_tokens, Split, TaskSet, NO_TOKEN, YES_TOKEN};
use crate::numeric::{substream_seed, Vec1D};
use crate::vision::{generate_scene, PatchEncoder, VisionTokens};

/// Patch size used by the harness; 48x48 scenes yield 36 vision tokens.
pub const PATCH_SIZE: usize = 8;

/// Build the decoder for a run: seeded weights plus a prior-bias head that
/// pushes toward the yes token (the text-inertia stand-in).
pub fn build_model(config: &RunConfig) -> Result<DecoderModel> {
    let mut bias = Vec1D::zeros(config.decoder.vocab_size);
    bias.data_mut()[YES_TOKEN] = 1.0;
    bias.data_mut()[NO_TOKEN] = -1.0;
    DecoderModel::new(&config.decoder, config.model_seed)?.with_prior_bias(bias)
}

pub fn build_encoder(config: &RunConfig) -> PatchEncoder {
    PatchEncoder::new(PATCH_SIZE, config.decoder.hidden_dim, config.encoder_seed)
}

fn combined_logits(
    model: &DecoderModel,
    state: &DecodeState,
    neg_state: Option<&DecodeState>,
    pipeline: &Pipeline,
) -> Result<Vec1D> {
    let logits = state.current_logits(model)?;
    match (&pipeline.contrast, neg_state) {
        (Some(contrast), Some(neg)) => {
            // Contrastive adjustment: amplify the main stream, subtract the
            // degraded stream.
            let neg_logits = neg.current_logits(model)?;
            logits
                .scale(1.0 + contrast.weight)
                .sub(&neg_logits.scale(contrast.weight))
        }
        _ => Ok(logits),
    }
}

/// Greedy decoding under a pipeline, honoring the logit contrast when
/// present. Used for trace-style diagnostics and sequence-equality tests.
pub fn pipeline_decode(
    model: &DecoderModel,
    vision: &VisionTokens,
    query: &[TokenId],
    pipeline: &Pipeline,
    max_new: usize,
) -> Result<Vec<TokenId>> {
    let vanilla = HookSet::new();
    let mut state = DecodeState::new(model, vision, query)?;
    state.prefill(model, &pipeline.hooks)?;
    let mut neg_state = match &pipeline.contrast {
        Some(c) => {
            let mut s = DecodeState::new(model, &c.vision, query)?;
            s.prefill(model, &vanilla)?;
            Some(s)
        }
        None => None,
    };
    let mut tokens = Vec::with_capacity(max_new);
    loop {
        let logits = combined_logits(model, &state, neg_state.as_ref(), pipeline)?;
        let token = argmax_token(&logits);
        tokens.push(token);
        if tokens.len() == max_new || model.config().eos_token == Some(token) {
            break;
        }
        state.advance(model, token, &pipeline.hooks)?;
        if let Some(neg) = neg_state.as_mut() {
            neg.advance(model, token, &vanilla)?;
        }
    }
    Ok(tokens)
}

/// Decode up to `answer_step` steps and compare the yes/no logits there.
/// Returns true for a yes answer.
pub fn answer_question(
    model: &DecoderModel,
    vision: &VisionTokens,
    query: &[TokenId],
    pipeline: &Pipeline,
    answer_step: usize,
) -> Result<bool> {
    let vanilla = HookSet::new();
    let mut state = DecodeState::new(model, vision, query)?;
    state.prefill(model, &pipeline.hooks)?;
    let mut neg_state = match &pipeline.contrast {
        Some(c) => {
            let mut s = DecodeState::new(model, &c.vision, query)?;
            s.prefill(model, &vanilla)?;
            Some(s)
        }
        None => None,
    };
    for _ in 0..answer_step {
        let logits = combined_logits(model, &state, neg_state.as_ref(), pipeline)?;
        let token = argmax_token(&logits);
        state.advance(model, token, &pipeline.hooks)?;
        if let Some(neg) = neg_state.as_mut() {
            neg.advance(model, token, &vanilla)?;
        }
    }
    let logits = combined_logits(model, &state, neg_state.as_ref(), pipeline)?;
    // Ties go to the lower token id, which is yes.
    Ok(logits.data()[NO_TOKEN] <= logits.data()[YES_TOKEN])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub total_ms: f64,
    pub per_question_ms: f64,
}

/// Scored outcome of one run. Everything except `timing` is a deterministic
/// function of the config fingerprint and the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub task_fingerprint: String,
    pub split_metrics: BTreeMap<String, SplitMetrics>,
    pub overall: SplitMetrics,
    /// Fraction of absent-object questions answered yes.
    pub hallucination_proxy_rate: f64,
    pub timing: TimingStats,
}

#[derive(Debug, Clone, Copy)]
pub struct QuestionOutcome {
    pub split: Split,
    pub truth_yes: bool,
    pub answered_yes: bool,
}

fn score(outcomes: &[QuestionOutcome]) -> SplitMetrics {
    let n = outcomes.len();
    let correct = outcomes
        .iter()
        .filter(|o| o.truth_yes == o.answered_yes)
        .count();
    let tp = outcomes.iter().filter(|o| o.truth_yes && o.answered_yes).count();
    let fp = outcomes.iter().filter(|o| !o.truth_yes && o.answered_yes).count();
    let f_n = outcomes.iter().filter(|o| o.truth_yes && !o.answered_yes).count();
    let denom = 2 * tp + fp + f_n;
    SplitMetrics {
        n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        f1: if denom == 0 {
            1.0
        } else {
            2.0 * tp as f64 / denom as f64
        },
    }
}

/// Run every question of `task` under `config` and score the answers.
pub fn run_experiment(config: &RunConfig, task: &TaskSet) -> Result<RunResult> {
    config.validate(task_vision_tokens(task))?;
    let model = build_model(config)?;
    let encoder = build_encoder(config);
    let started = Instant::now();
    let outcomes = run_outcomes(config, task, &model, &encoder)?;
    let total_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut split_metrics = BTreeMap::new();
    for split in Split::ALL {
        let subset: Vec<QuestionOutcome> = outcomes
            .iter()
            .copied()
            .filter(|o| o.split == split)
            .collect();
        split_metrics.insert(split.name().to_string(), score(&subset));
    }
    let overall = score(&outcomes);
    let absent: Vec<&QuestionOutcome> = outcomes.iter().filter(|o| !o.truth_yes).collect();
    let proxy = if absent.is_empty() {
        0.0
    } else {
        absent.iter().filter(|o| o.answered_yes).count() as f64 / absent.len() as f64
    };

    Ok(RunResult {
        mode: config.mode.to_string(),
        seed: config.seed,
        config_fingerprint: config.fingerprint(),
        task_fingerprint: task.fingerprint(),
        split_metrics,
        overall,
        hallucination_proxy_rate: proxy,
        timing: TimingStats {
            total_ms,
            per_question_ms: total_ms / task.questions.len().max(1) as f64,
        },
    })
}

/// Per-question outcomes, exposed for sweeps and diagnostics.
pub fn run_outcomes(
    config: &RunConfig,
    task: &TaskSet,
    model: &DecoderModel,
    encoder: &PatchEncoder,
) -> Result<Vec<QuestionOutcome>> {
    let mut outcomes = Vec::with_capacity(task.questions.len());
    for (index, question) in task.questions.iter().enumerate() {
        let scene = generate_scene(&task.scene_specs[question.scene_index])?;
        let query = question_tokens(question.object_id);
        let question_seed = substream_seed(config.seed, index as u64);
        let pipeline = assemble_pipeline(
            config.mode,
            model,
            encoder,
            &scene,
            &query,
            &config.calib,
            config.contrast_weight,
            question_seed,
        )?;
        let vision = encoder.encode(&scene)?;
        let answered_yes =
            answer_question(model, &vision, &query, &pipeline, config.answer_step)?;
        outcomes.push(QuestionOutcome {
            split: question.split,
            truth_yes: question.truth_yes,
            answered_yes,
        });
    }
    Ok(outcomes)
}

/// Vision tokens per scene for this task's geometry.
pub fn task_vision_tokens(task: &TaskSet) -> usize {
    task.scene_specs
        .first()
        .map(|s| (s.width / PATCH_SIZE) * (s.height / PATCH_SIZE))
        .unwrap_or(36)
}
