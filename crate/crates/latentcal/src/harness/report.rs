//! Result emission: one CSV row per run plus a JSON summary.
//!
//! Output is byte-stable for identical inputs: results are sorted by
//! fingerprint, mode, and seed before writing, float formatting is fixed,
//! and all timing lives in a dedicated JSON subobject so everything else
//! can be compared byte for byte across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::experiment::RunResult;
use crate::harness::task::Split;

/// Column layout of the report CSV, one row per run.
pub const CSV_COLUMNS: [&str; 13] = [
    "mode",
    "seed",
    "fingerprint",
    "acc_random",
    "f1_random",
    "acc_popular",
    "f1_popular",
    "acc_adversarial",
    "f1_adversarial",
    "acc_overall",
    "f1_overall",
    "proxy_rate",
    "n_questions",
];

fn fmt_metric(x: f64) -> String {
    format!("{x:.6}")
}

/// Render the CSV table for a slice of results (sorted internally).
pub fn render_csv(results: &[RunResult]) -> String {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.config_fingerprint, &a.mode, a.seed).cmp(&(&b.config_fingerprint, &b.mode, b.seed))
    });
    let mut out = String::new();
    let _ = writeln!(out, "{}", CSV_COLUMNS.join(","));
    for r in sorted {
        let mut cells = vec![r.mode.clone(), r.seed.to_string(), r.config_fingerprint.clone()];
        for split in Split::ALL {
            let m = &r.split_metrics[split.name()];
            cells.push(fmt_metric(m.accuracy));
            cells.push(fmt_metric(m.f1));
        }
        cells.push(fmt_metric(r.overall.accuracy));
        cells.push(fmt_metric(r.overall.f1));
        cells.push(fmt_metric(r.hallucination_proxy_rate));
        cells.push(r.overall.n.to_string());
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Write `report.csv` and `summary.json` under `dir`.
pub fn emit_report(results: &[RunResult], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if results.is_empty() {
        return Err(Error::EmptyInput("emit_report"));
    }
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("report.csv");
    fs::write(&csv_path, render_csv(results))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        results: Vec<&'a RunResult>,
    }
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.config_fingerprint, &a.mode, a.seed).cmp(&(&b.config_fingerprint, &b.mode, b.seed))
    });
    let json_path = dir.join("summary.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&Summary { results: sorted })?,
    )?;
    Ok((csv_path, json_path))
}
