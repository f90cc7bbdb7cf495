//! Synthetic object-presence task.
//!
//! Balanced yes/no questions over generated scenes, organized in three
//! splits of increasing difficulty for the distractor (absent) objects:
//! `random` draws them uniformly, `popular` picks the globally most frequent
//! ids, and `adversarial` picks the ids that co-occur most with the objects
//! actually present. Scenes are stored as specs and regenerated from their
//! seeds, so a task file fully determines every pixel downstream.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::TokenId;
use crate::error::{Error, Result};
use crate::numeric::{substream_seed, Rng};
use crate::vision::{generate_scene, SceneSpec, OBJECT_VOCAB_MAX};

/// Token protocol: the decoder's vocabulary is abstract, so the task fixes
/// a few well-known ids.
pub const YES_TOKEN: TokenId = 0;
pub const NO_TOKEN: TokenId = 1;
pub const ASK_TOKEN: TokenId = 2;
pub const OBJECT_TOKEN_BASE: TokenId = 8;

pub fn object_token(object_id: usize) -> TokenId {
    OBJECT_TOKEN_BASE + object_id
}

/// Query tokens for "is there object `object_id`?".
pub fn question_tokens(object_id: usize) -> Vec<TokenId> {
    vec![ASK_TOKEN, object_token(object_id)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Random,
    Popular,
    Adversarial,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Random, Split::Popular, Split::Adversarial];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Random => "random",
            Split::Popular => "popular",
            Split::Adversarial => "adversarial",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskQuestion {
    pub scene_index: usize,
    pub object_id: usize,
    pub truth_yes: bool,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub object_vocab: usize,
    pub seed: u64,
    pub scene_specs: Vec<SceneSpec>,
    /// Ground-truth object ids per scene (recorded for transparency; scenes
    /// regenerate identically from their specs).
    pub scene_objects: Vec<Vec<usize>>,
    pub questions: Vec<TaskQuestion>,
}

impl TaskSet {
    /// Content hash over the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("task serialization");
        hex_digest(&json)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct File<'a> {
            fingerprint: String,
            task: &'a TaskSet,
        }
        let text = serde_json::to_string_pretty(&File {
            fingerprint: self.fingerprint(),
            task: self,
        })?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Load and verify the recorded fingerprint against the content.
    pub fn load(path: &Path) -> Result<TaskSet> {
        #[derive(Deserialize)]
        struct File {
            fingerprint: String,
            task: TaskSet,
        }
        let file: File = serde_json::from_str(&fs::read_to_string(path)?)?;
        let computed = file.task.fingerprint();
        if computed != file.fingerprint {
            return Err(Error::FingerprintMismatch {
                recorded: file.fingerprint,
                computed,
            });
        }
        Ok(file.task)
    }
}

pub fn hex_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build a deterministic task: `n_scenes` scenes with 2 to 4 objects each,
/// one yes and one no question per scene per split.
pub fn build_task(object_vocab: usize, n_scenes: usize, seed: u64) -> Result<TaskSet> {
    if n_scenes == 0 {
        return Err(Error::InvalidConfig("n_scenes must be at least 1".into()));
    }
    if object_vocab > OBJECT_VOCAB_MAX {
        return Err(Error::InvalidConfig(format!(
            "object_vocab {object_vocab} exceeds palette size {OBJECT_VOCAB_MAX}"
        )));
    }
    if object_vocab < 6 {
        // 4 objects in a scene plus at least one absent distractor candidate.
        return Err(Error::InvalidConfig(format!(
            "object_vocab {object_vocab} too small for distractor sampling (need at least 6)"
        )));
    }

    let mut rng = Rng::from_seed(seed);
    let mut scene_specs = Vec::with_capacity(n_scenes);
    let mut scene_objects = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let object_count = 2 + rng.range(3); // 2..=4
        let spec = SceneSpec::new(object_count, object_vocab, substream_seed(seed, i as u64));
        let scene = generate_scene(&spec)?;
        scene_objects.push(scene.object_ids());
        scene_specs.push(spec);
    }

    // Global statistics for the popular and adversarial splits.
    let mut frequency = vec![0usize; object_vocab];
    let mut cooccurrence = vec![vec![0usize; object_vocab]; object_vocab];
    for ids in &scene_objects {
        for &a in ids {
            frequency[a] += 1;
            for &b in ids {
                if a != b {
                    cooccurrence[a][b] += 1;
                }
            }
        }
    }

    let mut questions = Vec::with_capacity(n_scenes * 6);
    for (scene_index, present) in scene_objects.iter().enumerate() {
        let absent: Vec<usize> = (0..object_vocab).filter(|id| !present.contains(id)).collect();
        if absent.is_empty() {
            return Err(Error::InvalidConfig(
                "vocabulary too small: a scene uses every object id".into(),
            ));
        }
        for split in Split::ALL {
            let yes_object = present[rng.range(present.len())];
            let no_object = match split {
                Split::Random => absent[rng.range(absent.len())],
                Split::Popular => {
                    // Most frequent absent id, ties to the lowest id.
                    *absent
                        .iter()
                        .max_by_key(|&&id| (frequency[id], usize::MAX - id))
                        .expect("absent nonempty")
                }
                Split::Adversarial => *absent
                    .iter()
                    .max_by_key(|&&id| {
                        let co = present.iter().map(|&p| cooccurrence[id][p]).max().unwrap_or(0);
                        (co, usize::MAX - id)
                    })
                    .expect("absent nonempty"),
            };
            questions.push(TaskQuestion {
                scene_index,
                object_id: yes_object,
                truth_yes: true,
                split,
            });
            questions.push(TaskQuestion {
                scene_index,
                object_id: no_object,
                truth_yes: false,
                split,
            });
        }
    }

    Ok(TaskSet {
        object_vocab,
        seed,
        scene_specs,
        scene_objects,
        questions,
    })
}
