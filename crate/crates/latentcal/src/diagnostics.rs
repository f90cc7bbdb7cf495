//! Measurable reproductions of the three motivating observations, plus the
//! overhead contract.
//!
//! - attention decay: vision-token attention mass per generation step, with
//!   a Kendall-tau trend statistic;
//! - augmentation complementarity: cosine overlap of the injection-attention
//!   weights computed against the original and augmented token sets;
//! - in-distribution pruning: per-layer hidden-state distances of pruned
//!   streams versus masked-image streams at equal information budgets
//!   (the scatterplot claim turned into a centroid-distance statistic);
//! - overhead: wall-clock per-token cost of the full pipeline against
//!   vanilla decoding, with the one-time probe cost reported separately.
//!
//! All statistics are deterministic under fixed seeds; only wall-clock
//! timings vary between runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crc::{make_negatives, CalibConfig};
use crate::decoder::{
    greedy_decode_recorded, AttnRecorder, DecoderModel, HookSet, LayerProbe, TokenId,
};
use crate::error::{Error, Result};
use crate::harness::{
    assemble_pipeline, pipeline_decode, question_tokens, Mode, RunConfig, TaskSet,
};
use crate::numeric::{Rng, Vec1D};
use crate::svc::attention_weights;
use crate::vision::{generate_scene, mask_image, PatchEncoder, SyntheticScene, VisionTokens};

// ---------------------------------------------------------------------------
// Attention decay
// ---------------------------------------------------------------------------

/// Vision-attention mass per generated token at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub layer: usize,
    /// `masses[t - 1]` is the head-averaged attention mass on vision columns
    /// in the row that produced token `t`.
    pub masses: Vec<f64>,
}

impl AttentionTrace {
    /// Kendall-tau trend of mass against step; negative means decay.
    pub fn trend(&self) -> f64 {
        kendall_tau(&self.masses)
    }
}

/// Run a vanilla greedy decode and record the vision-attention mass at
/// `layer` for the row producing each of the `max_new` tokens.
pub fn trace_visual_attention(
    model: &DecoderModel,
    vision: &VisionTokens,
    query: &[TokenId],
    max_new: usize,
    layer: usize,
) -> Result<AttentionTrace> {
    let mut recorder = AttnRecorder::at_layer(layer);
    let tokens = greedy_decode_recorded(
        model,
        vision,
        query,
        &HookSet::new(),
        max_new,
        Some(&mut recorder),
    )?;
    // Token t comes from the row at position context_len - 1 + (t - 1).
    let first_row = vision.len() + query.len() - 1;
    let mut masses = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let position = first_row + t;
        let mass = recorder
            .masses
            .iter()
            .find(|(p, _)| *p == position)
            .map(|(_, m)| *m)
            .ok_or(Error::LayerOutOfRange {
                layer,
                num_layers: model.config().num_layers,
            })?;
        masses.push(mass);
    }
    Ok(AttentionTrace { layer, masses })
}

/// Kendall tau of a sequence against its index: pair-concordance in
/// `[-1, 1]`, 0 for flat, negative for decreasing trends.
pub fn kendall_tau(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if values[j] > values[i] {
                concordant += 1;
            } else if values[j] < values[i] {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64
}

// ---------------------------------------------------------------------------
// Complementarity
// ---------------------------------------------------------------------------

/// Cosine overlap of the injection-attention weights computed against the
/// original and the augmented token sets separately. 1 means identical
/// focus, 0 disjoint focus.
pub fn complementarity_overlap(
    v: &VisionTokens,
    v_aug: &VisionTokens,
    h_query: &Vec1D,
) -> Result<f64> {
    if v.dim() != v_aug.dim() || v.len() != v_aug.len() {
        return Err(Error::ShapeMismatch {
            op: "complementarity_overlap",
            lhs_rows: v.len(),
            lhs_cols: v.dim(),
            rhs_rows: v_aug.len(),
            rhs_cols: v_aug.dim(),
        });
    }
    let q = crate::numeric::Matrix2D::from_vec(1, h_query.dim(), h_query.data().to_vec())?;
    let w1 = attention_weights(&q, &v.tokens)?.row_vec(0);
    let w2 = attention_weights(&q, &v_aug.tokens)?.row_vec(0);
    let denom = w1.norm() * w2.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(w1.dot(&w2)? / denom)
}

// ---------------------------------------------------------------------------
// Information gap vs modality gap
// ---------------------------------------------------------------------------

/// One probe-distance measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub layer: usize,
    pub sample: usize,
    pub distance: f64,
}

/// Distances from the original stream's probe state to pruned-negative and
/// masked-image streams, per layer and sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DistanceReport {
    pub pruned: Vec<DistanceEntry>,
    pub masked: Vec<DistanceEntry>,
}

impl DistanceReport {
    pub fn mean_pruned(&self, layer: usize) -> f64 {
        mean(self.pruned.iter().filter(|e| e.layer == layer).map(|e| e.distance))
    }

    pub fn mean_masked(&self, layer: usize) -> f64 {
        mean(self.masked.iter().filter(|e| e.layer == layer).map(|e| e.distance))
    }

    pub fn len(&self) -> usize {
        self.pruned.len() + self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pruned.is_empty() && self.masked.is_empty()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Compare the two degradation routes at matched information budgets: `k`
/// pruned negatives keeping `n_h` tokens each, against `k` masked-image
/// variants corrupting `1 - n_h / n_v` of the pixel blocks.
pub fn distance_report(
    model: &DecoderModel,
    encoder: &PatchEncoder,
    scene: &SyntheticScene,
    query: &[TokenId],
    config: &CalibConfig,
    rng: &mut Rng,
) -> Result<DistanceReport> {
    let vision = encoder.encode(scene)?;
    let org = model.probe_layer_states(&vision, query, config.l_c)?;
    let mut report = DistanceReport::default();

    let negatives = make_negatives(&vision, config.k, config.n_h, rng)?;
    for (sample, neg) in negatives.iter().enumerate() {
        let states = model.probe_layer_states(neg, query, config.l_c)?;
        for (l, (o, s)) in org.iter().zip(&states).enumerate() {
            report.pruned.push(DistanceEntry {
                layer: l + 1,
                sample,
                distance: o.sub(s)?.norm(),
            });
        }
    }

    let fraction = 1.0 - config.n_h as f64 / vision.len() as f64;
    for sample in 0..config.k {
        let mut sub = rng.fork();
        let masked = mask_image(scene, fraction.max(1e-9), encoder.patch(), &mut sub)?;
        let masked_tokens = encoder.encode(&masked)?;
        let states = model.probe_layer_states(&masked_tokens, query, config.l_c)?;
        for (l, (o, s)) in org.iter().zip(&states).enumerate() {
            report.masked.push(DistanceEntry {
                layer: l + 1,
                sample,
                distance: o.sub(s)?.norm(),
            });
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Overhead
// ---------------------------------------------------------------------------

/// Wall-clock comparison of vanilla decoding against the full pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub max_new: usize,
    pub vanilla_per_token_ms: f64,
    pub pipeline_per_token_ms: f64,
    /// Steady-state per-token ratio, probe excluded.
    pub ratio: f64,
    /// One-time probe cost (negative sampling plus probe passes).
    pub probe_ms: f64,
    /// Probe cost amortized over the generated tokens.
    pub probe_amortized_ms: f64,
}

/// Best-of-repeats timing for one scene/query at the configured defaults.
/// Warm-up runs are excluded, and each measurement takes the fastest of
/// `repeats` runs, which is stable under scheduler interference.
pub fn measure_overhead(
    model: &DecoderModel,
    encoder: &PatchEncoder,
    scene: &SyntheticScene,
    query: &[TokenId],
    config: &CalibConfig,
    max_new: usize,
    repeats: usize,
) -> Result<OverheadReport> {
    let vision = encoder.encode(scene)?;
    let vanilla_pipeline = assemble_pipeline(
        Mode::Vanilla,
        model,
        encoder,
        scene,
        query,
        config,
        1.0,
        7,
    )?;
    let full = assemble_pipeline(Mode::Unified, model, encoder, scene, query, config, 1.0, 7)?;

    let time_decode = |pipeline: &crate::harness::Pipeline| -> Result<f64> {
        pipeline_decode(model, &vision, query, pipeline, max_new)?; // warm-up
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            pipeline_decode(model, &vision, query, pipeline, max_new)?;
            best = best.min(t0.elapsed().as_secs_f64() * 1e3);
        }
        Ok(best)
    };

    let vanilla_ms = time_decode(&vanilla_pipeline)?;
    let pipeline_ms = time_decode(&full)?;

    // Probe cost: time the pipeline assembly for a cache-building mode.
    let probe_ms = if config.lambda_c > 0.0 {
        assemble_pipeline(Mode::Crc, model, encoder, scene, query, config, 1.0, 7)?; // warm-up
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            assemble_pipeline(Mode::Crc, model, encoder, scene, query, config, 1.0, 7)?;
            best = best.min(t0.elapsed().as_secs_f64() * 1e3);
        }
        best
    } else {
        0.0
    };

    let vanilla_per_token = vanilla_ms / max_new as f64;
    let pipeline_per_token = pipeline_ms / max_new as f64;
    Ok(OverheadReport {
        max_new,
        vanilla_per_token_ms: vanilla_per_token,
        pipeline_per_token_ms: pipeline_per_token,
        ratio: pipeline_per_token / vanilla_per_token,
        probe_ms,
        probe_amortized_ms: probe_ms / max_new as f64,
    })
}

// ---------------------------------------------------------------------------
// Pruning sweep
// ---------------------------------------------------------------------------

/// Task accuracy as a function of how many vision tokens the model is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningCurve {
    /// `(n_keep, accuracy, per-question correctness)` per grid point,
    /// sorted by ascending `n_keep`.
    pub points: Vec<PruningPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPoint {
    pub n_keep: usize,
    pub accuracy: f64,
    pub correct: Vec<bool>,
}

/// Vanilla accuracy when the decoder sees only `n_keep` randomly kept vision
/// tokens, for each grid value. `n_keep == n_vision` reuses the full token
/// matrix, so that point equals the unpruned accuracy exactly.
pub fn pruning_sweep(
    config: &RunConfig,
    task: &TaskSet,
    grid: &[usize],
) -> Result<PruningCurve> {
    let model = crate::harness::build_model(config)?;
    let encoder = crate::harness::build_encoder(config);
    let vanilla = HookSet::new();
    let mut points = Vec::with_capacity(grid.len());
    let mut grid_sorted: Vec<usize> = grid.to_vec();
    grid_sorted.sort_unstable();
    for &n_keep in &grid_sorted {
        let mut correct = Vec::with_capacity(task.questions.len());
        for (index, question) in task.questions.iter().enumerate() {
            let scene = generate_scene(&task.scene_specs[question.scene_index])?;
            let vision = encoder.encode(&scene)?;
            let seed = crate::numeric::substream_seed(config.seed, index as u64);
            let kept = if n_keep == vision.len() {
                vision
            } else {
                crate::vision::prune_tokens(
                    &vision,
                    n_keep,
                    &mut Rng::substream(seed, 101 + n_keep as u64),
                )?
            };
            let query = question_tokens(question.object_id);
            let pipeline = crate::harness::Pipeline {
                mode: Mode::Vanilla,
                hooks: vanilla.clone(),
                cache: None,
                contrast: None,
            };
            let answered_yes = crate::harness::answer_question(
                &model,
                &kept,
                &query,
                &pipeline,
                config.answer_step,
            )?;
            correct.push(answered_yes == question.truth_yes);
        }
        let accuracy = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
        points.push(PruningPoint {
            n_keep,
            accuracy,
            correct,
        });
    }
    Ok(PruningCurve { points })
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// Percentile bootstrap confidence interval for the mean of `values`.
pub fn bootstrap_mean_ci(
    values: &[f64],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> (f64, f64) {
    assert!(!values.is_empty());
    let mut rng = Rng::from_seed(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..values.len() {
            sum += values[rng.range(values.len())];
        }
        means.push(sum / values.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let alpha = (1.0 - confidence) / 2.0;
    let lo = ((resamples as f64 * alpha) as usize).min(resamples - 1);
    let hi = ((resamples as f64 * (1.0 - alpha)) as usize).min(resamples - 1);
    (means[lo], means[hi])
}

/// Bootstrap CI for the accuracy difference between two paired correctness
/// vectors (resampling question indices jointly).
pub fn bootstrap_paired_accuracy_diff_ci(
    a: &[bool],
    b: &[bool],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as i8 - y as i8) as f64)
        .collect();
    bootstrap_mean_ci(&diffs, resamples, confidence, seed)
}
