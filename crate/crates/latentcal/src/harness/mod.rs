//! Experiment orchestration: the synthetic object-presence task, pipeline
//! assembly for every mode, scoring, and report emission.
//!
//! The `latentcal` binary is a thin CLI over this module; everything here is
//! library code so experiments are scriptable and testable in-process.

mod config;
mod experiment;
mod pipeline;
mod report;
mod task;

pub use config::{Mode, RunConfig};
pub use experiment::{
    answer_question, build_encoder, build_model, pipeline_decode, run_experiment, run_outcomes,
    task_vision_tokens, QuestionOutcome, RunResult, SplitMetrics, TimingStats, PATCH_SIZE,
};
pub use pipeline::{assemble_pipeline, ContrastStream, Pipeline};
pub use task::{
    build_task, hex_digest, object_token, question_tokens, Split, TaskQuestion, TaskSet,
    ASK_TOKEN, NO_TOKEN, OBJECT_TOKEN_BASE, YES_TOKEN,
};
pub use report::{emit_report, render_csv, CSV_COLUMNS};
