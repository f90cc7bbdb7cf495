//! Per-question pipeline assembly.
//!
//! A pipeline is the hook set for one decode plus, for the naive-combo
//! baseline, a logit-contrast stream. Hidden-state modes (svc, crc,
//! unified) never touch the logits function; the naive-combo baseline is
//! the only mode that does. When a strength parameter is zero its hooks are
//! simply not built, so zero-strength pipelines run the vanilla code path
//! bit for bit.

use crate::crc::{make_negatives, probe_directions, register_crc, CalibConfig, ProbeCache};
use crate::decoder::{DecoderModel, HookSet, TokenId};
use crate::error::Result;
use crate::harness::config::Mode;
use crate::numeric::Rng;
use crate::svc::{build_bank, register_svc};
use crate::vision::{augment, mask_image, AugmentConfig, PatchEncoder, SyntheticScene, VisionTokens};

/// Negative-logit stream for the naive-combo baseline.
pub struct ContrastStream {
    pub vision: VisionTokens,
    pub weight: f64,
}

pub struct Pipeline {
    pub mode: Mode,
    pub hooks: HookSet,
    pub cache: Option<ProbeCache>,
    pub contrast: Option<ContrastStream>,
}

impl Pipeline {
    /// Whether this pipeline post-processes the final logits (as opposed to
    /// intervening only on hidden states).
    pub fn intervenes_on_logits(&self) -> bool {
        self.contrast.is_some()
    }
}

/// Substream indices within one question's seed.
const SUB_AUGMENT: u64 = 1;
const SUB_PRUNE: u64 = 2;
const SUB_MASK: u64 = 3;

/// Assemble the hooks (and probe cache, and contrast stream) for one
/// question. `question_seed` scopes all randomness of this assembly.
#[allow(clippy::too_many_arguments)]
pub fn assemble_pipeline(
    mode: Mode,
    model: &DecoderModel,
    encoder: &PatchEncoder,
    scene: &SyntheticScene,
    query: &[TokenId],
    calib: &CalibConfig,
    contrast_weight: f64,
    question_seed: u64,
) -> Result<Pipeline> {
    let vision = encoder.encode(scene)?;
    calib.validate(model.config().num_layers, vision.len())?;

    let mut hooks = HookSet::new();
    let mut cache = None;
    let mut contrast = None;

    let wants_svc = matches!(mode, Mode::Svc | Mode::Unified | Mode::NaiveCombo);
    let wants_crc = matches!(mode, Mode::Crc | Mode::Unified);

    // CRC first: its hooks run before the injection at the shared layer.
    if wants_crc && calib.lambda_c > 0.0 {
        let mut prune_rng = Rng::substream(question_seed, SUB_PRUNE);
        let negatives = make_negatives(&vision, calib.k, calib.n_h, &mut prune_rng)?;
        let probe = probe_directions(
            model,
            &vision,
            query,
            &negatives,
            calib.l_c,
            calib.probe_position,
        )?;
        register_crc(&mut hooks, &probe, calib)?;
        cache = Some(probe);
    }

    if wants_svc && calib.lambda_s > 0.0 {
        let mut augment_rng = Rng::substream(question_seed, SUB_AUGMENT);
        let augmented = augment(scene, &AugmentConfig::default(), &mut augment_rng);
        let v_aug = encoder.encode(&augmented)?;
        let bank = build_bank(&vision, &v_aug)?;
        register_svc(&mut hooks, calib, bank)?;
    }

    if mode == Mode::NaiveCombo {
        let mut mask_rng = Rng::substream(question_seed, SUB_MASK);
        let fraction = 1.0 - calib.n_h as f64 / vision.len() as f64;
        let masked = mask_image(scene, fraction.max(1e-9), encoder.patch(), &mut mask_rng)?;
        contrast = Some(ContrastStream {
            vision: encoder.encode(&masked)?,
            weight: contrast_weight,
        });
    }

    Ok(Pipeline {
        mode,
        hooks,
        cache,
        contrast,
    })
}
