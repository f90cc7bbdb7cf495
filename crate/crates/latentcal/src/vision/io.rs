//! Scene export and import.
//!
//! Pixels go to binary PPM (P6, 8 bits per channel, so the image itself is
//! quantized); the ground truth travels in a JSON sidecar that round-trips
//! losslessly. Scenes are regenerated from their seed when exact pixels are
//! needed; the exported files exist for inspection and replay metadata.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vision::scene::{SceneObject, SceneProvenance, SyntheticScene};

/// Lossless sidecar accompanying an exported scene image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub provenance: SceneProvenance,
    pub objects: Vec<SceneObject>,
}

impl SceneSidecar {
    pub fn of(scene: &SyntheticScene) -> Self {
        Self {
            width: scene.width,
            height: scene.height,
            seed: scene.seed,
            provenance: scene.provenance,
            objects: scene.objects.clone(),
        }
    }
}

/// Write `<stem>.ppm` and `<stem>.json` for a scene.
pub fn export_scene(scene: &SyntheticScene, stem: &Path) -> Result<()> {
    let mut ppm = Vec::with_capacity(scene.pixels.len() * 3 + 32);
    write!(ppm, "P6\n{} {}\n255\n", scene.width, scene.height)?;
    for p in &scene.pixels {
        for c in p {
            ppm.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(stem.with_extension("ppm"), ppm)?;
    let sidecar = serde_json::to_string_pretty(&SceneSidecar::of(scene))?;
    fs::write(stem.with_extension("json"), sidecar)?;
    Ok(())
}

/// Read back an exported scene. Pixels are the 8-bit quantized values; the
/// sidecar fields are exact.
pub fn import_scene(stem: &Path) -> Result<SyntheticScene> {
    let sidecar: SceneSidecar = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    let bytes = fs::read(stem.with_extension("ppm"))?;
    let pixels = parse_ppm(&bytes, sidecar.width, sidecar.height)?;
    Ok(SyntheticScene {
        width: sidecar.width,
        height: sidecar.height,
        pixels,
        objects: sidecar.objects,
        seed: sidecar.seed,
        provenance: sidecar.provenance,
    })
}

fn parse_ppm(bytes: &[u8], width: usize, height: usize) -> Result<Vec<[f64; 3]>> {
    let malformed = |detail: &str| Error::FileFormat {
        kind: "ppm",
        detail: detail.to_string(),
    };
    // Header is three whitespace-separated fields after the magic.
    if !bytes.starts_with(b"P6") {
        return Err(malformed("missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let field = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| malformed("non-ascii header"))?;
        fields.push(
            field
                .parse::<usize>()
                .map_err(|_| malformed("non-numeric header field"))?,
        );
    }
    pos += 1; // single whitespace byte after maxval
    let [w, h, maxval] = fields[..] else {
        return Err(malformed("truncated header"));
    };
    if (w, h) != (width, height) || maxval != 255 {
        return Err(malformed("header disagrees with sidecar"));
    }
    let body = &bytes[pos..];
    if body.len() != w * h * 3 {
        return Err(malformed("pixel payload length mismatch"));
    }
    Ok(body
        .chunks_exact(3)
        .map(|c| {
            [
                c[0] as f64 / 255.0,
                c[1] as f64 / 255.0,
                c[2] as f64 / 255.0,
            ]
        })
        .collect())
}
