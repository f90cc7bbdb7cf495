//! Synthetic scenes, augmentation, patch encoding, and token degradation.
//!
//! Two deliberately different ways of weakening the visual signal live here:
//!
//! - [`prune_tokens`] removes encoded tokens and leaves the rest untouched
//!   (an information gap: the surviving evidence stays in-distribution);
//! - [`mask_image`] corrupts pixels before encoding (a modality gap: every
//!   affected token becomes an out-of-distribution sample).
//!
//! The probe pipeline uses the former; the latter exists as the contrast
//! case for the diagnostics module.

mod augment;
mod io;
mod scene;
mod tokens;

pub use augment::{augment, flip_horizontal, gaussian_blur, salt_and_pepper, AugmentConfig};
pub use io::{export_scene, import_scene, SceneSidecar};
pub use scene::{
    generate_scene, mask_image, object_color, SceneObject, SceneProvenance, SceneSpec,
    SyntheticScene, OBJECT_VOCAB_MAX,
};
pub use tokens::{prune_tokens, PatchEncoder, TokenProvenance, VisionTokens};
