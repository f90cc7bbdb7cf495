//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use latentcal::decoder::{DecoderConfig, DecoderModel};
use latentcal::harness::question_tokens;
use latentcal::vision::{generate_scene, PatchEncoder, SceneSpec, SyntheticScene, VisionTokens};

/// Compact decoder used where full default size is unnecessary.
pub fn small_config() -> DecoderConfig {
    DecoderConfig {
        num_layers: 4,
        hidden_dim: 32,
        num_heads: 2,
        vocab_size: 64,
        max_seq: 128,
        prior_bias_strength: 0.0,
        eos_token: None,
    }
}

pub fn small_model() -> DecoderModel {
    DecoderModel::new(&small_config(), 77).unwrap()
}

pub fn small_encoder() -> PatchEncoder {
    PatchEncoder::new(8, small_config().hidden_dim, 78)
}

pub fn fixture_scene() -> SyntheticScene {
    generate_scene(&SceneSpec::new(3, 12, 79)).unwrap()
}

pub fn fixture_vision() -> VisionTokens {
    small_encoder().encode(&fixture_scene()).unwrap()
}

pub fn fixture_query() -> Vec<usize> {
    question_tokens(4)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compare against a committed golden JSON value, or rewrite it when
/// `UPDATE_GOLDEN=1` is set.
pub fn check_golden<T>(name: &str, value: &T, compare: impl Fn(&T, &T) -> bool)
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden file {name}; run with UPDATE_GOLDEN=1"));
    let expected: T = serde_json::from_str(&text).unwrap();
    assert!(
        compare(value, &expected),
        "golden mismatch for {name}; regenerate with UPDATE_GOLDEN=1 if intended"
    );
}

pub fn matrices_close(a: &latentcal::numeric::Matrix2D, b: &latentcal::numeric::Matrix2D) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols() && a.max_abs_diff(b).unwrap() < 1e-12
}
