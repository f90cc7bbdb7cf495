//! Run configuration and its plain-text file format.
//!
//! A run config is a flat list of `key = value` lines in a fixed order.
//! Serialization is canonical (one spelling per value, fixed key order), so
//! the SHA-256 of the text doubles as the run fingerprint, and the format
//! round-trips losslessly: floats print in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crc::{CalibConfig, ProbePosition};
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::harness::task::hex_digest;

/// Pipeline variants the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// No intervention at all.
    Vanilla,
    /// Visual-context injection only.
    Svc,
    /// Representation calibration only.
    Crc,
    /// Both, at the hidden-state level.
    Unified,
    /// Visual injection plus logit-level contrastive decoding against a
    /// masked-image stream; the combination-of-disjoint-methods baseline.
    NaiveCombo,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Vanilla,
        Mode::Svc,
        Mode::Crc,
        Mode::Unified,
        Mode::NaiveCombo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Svc => "svc",
            Mode::Crc => "crc",
            Mode::Unified => "unified",
            Mode::NaiveCombo => "naive-combo",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

/// Everything a run needs: model shape, calibration hyperparameters, mode,
/// and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Master experiment seed; per-question substreams derive from it.
    pub seed: u64,
    /// Weight-initialization seed for the decoder.
    pub model_seed: u64,
    /// Seed for the patch encoder.
    pub encoder_seed: u64,
    pub decoder: DecoderConfig,
    pub calib: CalibConfig,
    /// Contrastive weight for the naive-combo baseline.
    pub contrast_weight: f64,
    /// Generation step whose logits decide the yes/no answer. The first
    /// step is the probe step, so answers are read at step 1 by default.
    pub answer_step: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Vanilla,
            seed: 0,
            model_seed: 1,
            encoder_seed: 2,
            decoder: DecoderConfig::default(),
            calib: CalibConfig::default(),
            contrast_weight: 1.0,
            answer_step: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n_vision: usize) -> Result<()> {
        self.decoder.validate()?;
        self.calib.validate(self.decoder.num_layers, n_vision)?;
        if self.answer_step == 0 {
            return Err(Error::InvalidConfig(
                "answer_step must be at least 1 (step 0 is the probe step)".into(),
            ));
        }
        Ok(())
    }

    /// Canonical key-value serialization; input to the fingerprint.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let eos = match self.decoder.eos_token {
            Some(t) => t.to_string(),
            None => "none".to_string(),
        };
        let probe_position = match self.calib.probe_position {
            ProbePosition::FinalPosition => "final",
            ProbePosition::QueryMean => "query-mean",
        };
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "model_seed = {}", self.model_seed);
        let _ = writeln!(s, "encoder_seed = {}", self.encoder_seed);
        let _ = writeln!(s, "decoder.num_layers = {}", self.decoder.num_layers);
        let _ = writeln!(s, "decoder.hidden_dim = {}", self.decoder.hidden_dim);
        let _ = writeln!(s, "decoder.num_heads = {}", self.decoder.num_heads);
        let _ = writeln!(s, "decoder.vocab_size = {}", self.decoder.vocab_size);
        let _ = writeln!(s, "decoder.max_seq = {}", self.decoder.max_seq);
        let _ = writeln!(
            s,
            "decoder.prior_bias_strength = {}",
            self.decoder.prior_bias_strength
        );
        let _ = writeln!(s, "decoder.eos_token = {eos}");
        let _ = writeln!(s, "calib.l_c = {}", self.calib.l_c);
        let _ = writeln!(s, "calib.lambda_s = {}", self.calib.lambda_s);
        let _ = writeln!(s, "calib.lambda_c = {}", self.calib.lambda_c);
        let _ = writeln!(s, "calib.k = {}", self.calib.k);
        let _ = writeln!(s, "calib.n_h = {}", self.calib.n_h);
        let _ = writeln!(s, "calib.seed = {}", self.calib.seed);
        let _ = writeln!(s, "calib.svc_prefill = {}", self.calib.svc_prefill);
        let _ = writeln!(s, "calib.svc_blend_input = {}", self.calib.svc_blend_input);
        let _ = writeln!(s, "calib.crc_flip_sign = {}", self.calib.crc_flip_sign);
        let _ = writeln!(s, "calib.probe_position = {probe_position}");
        let _ = writeln!(s, "contrast_weight = {}", self.contrast_weight);
        let _ = writeln!(s, "answer_step = {}", self.answer_step);
        s
    }

    /// Parse the key-value format. Every key must appear exactly once;
    /// unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::FileFormat {
                kind: "config",
                detail: format!("line {}: expected `key = value`", lineno + 1),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::FileFormat {
                    kind: "config",
                    detail: format!("duplicate key `{key}`"),
                });
            }
            apply_key(&mut config, key, value)?;
        }
        Ok(config)
    }

    pub fn fingerprint(&self) -> String {
        hex_digest(&self.to_text())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_text(&fs::read_to_string(path)?)
    }
}

fn apply_key(config: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let bad = |detail: String| Error::FileFormat {
        kind: "config",
        detail,
    };
    let parse_u = |v: &str, key: &str| {
        v.parse::<u64>()
            .map_err(|_| bad(format!("key `{key}`: expected integer, got `{v}`")))
    };
    let parse_f = |v: &str, key: &str| {
        v.parse::<f64>()
            .map_err(|_| bad(format!("key `{key}`: expected number, got `{v}`")))
    };
    let parse_b = |v: &str, key: &str| {
        v.parse::<bool>()
            .map_err(|_| bad(format!("key `{key}`: expected bool, got `{v}`")))
    };
    match key {
        "mode" => config.mode = value.parse()?,
        "seed" => config.seed = parse_u(value, key)?,
        "model_seed" => config.model_seed = parse_u(value, key)?,
        "encoder_seed" => config.encoder_seed = parse_u(value, key)?,
        "decoder.num_layers" => config.decoder.num_layers = parse_u(value, key)? as usize,
        "decoder.hidden_dim" => config.decoder.hidden_dim = parse_u(value, key)? as usize,
        "decoder.num_heads" => config.decoder.num_heads = parse_u(value, key)? as usize,
        "decoder.vocab_size" => config.decoder.vocab_size = parse_u(value, key)? as usize,
        "decoder.max_seq" => config.decoder.max_seq = parse_u(value, key)? as usize,
        "decoder.prior_bias_strength" => {
            config.decoder.prior_bias_strength = parse_f(value, key)?
        }
        "decoder.eos_token" => {
            config.decoder.eos_token = if value == "none" {
                None
            } else {
                Some(parse_u(value, key)? as usize)
            }
        }
        "calib.l_c" => config.calib.l_c = parse_u(value, key)? as usize,
        "calib.lambda_s" => config.calib.lambda_s = parse_f(value, key)?,
        "calib.lambda_c" => config.calib.lambda_c = parse_f(value, key)?,
        "calib.k" => config.calib.k = parse_u(value, key)? as usize,
        "calib.n_h" => config.calib.n_h = parse_u(value, key)? as usize,
        "calib.seed" => config.calib.seed = parse_u(value, key)?,
        "calib.svc_prefill" => config.calib.svc_prefill = parse_b(value, key)?,
        "calib.svc_blend_input" => config.calib.svc_blend_input = parse_b(value, key)?,
        "calib.crc_flip_sign" => config.calib.crc_flip_sign = parse_b(value, key)?,
        "calib.probe_position" => {
            config.calib.probe_position = match value {
                "final" => ProbePosition::FinalPosition,
                "query-mean" => ProbePosition::QueryMean,
                other => {
                    return Err(bad(format!(
                        "key `calib.probe_position`: expected final or query-mean, got `{other}`"
                    )))
                }
            }
        }
        "contrast_weight" => config.contrast_weight = parse_f(value, key)?,
        "answer_step" => config.answer_step = parse_u(value, key)? as usize,
        other => return Err(bad(format!("unknown key `{other}`"))),
    }
    Ok(())
}
