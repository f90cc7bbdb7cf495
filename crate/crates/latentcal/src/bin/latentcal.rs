//! Experiment CLI: task generation, runs, sweeps, diagnostics, reports.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for IO errors,
//! 4 for numeric contract violations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latentcal::diagnostics::{
    bootstrap_mean_ci, complementarity_overlap, distance_report, measure_overhead, pruning_sweep,
    trace_visual_attention,
};
use latentcal::error::{Error, ErrorCategory};
use latentcal::harness::{
    build_encoder, build_model, build_task, emit_report, question_tokens, run_experiment,
    task_vision_tokens, Mode, RunConfig, RunResult, TaskSet,
};
use latentcal::numeric::{substream_seed, Rng, Vec1D};
use latentcal::vision::{
    augment, export_scene, generate_scene, AugmentConfig, SceneSpec,
};

#[derive(Parser)]
#[command(
    name = "latentcal",
    about = "Desk-scale multimodal decoder with latent visual injection and representation calibration",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic object-presence task file.
    GenTask(GenTaskArgs),
    /// Run one experiment configuration over a task.
    Run(RunArgs),
    /// Run a (mode x seed) grid and emit a combined report.
    Sweep(SweepArgs),
    /// Emit the diagnostic statistics (attention decay, complementarity,
    /// degradation distances, overhead, pruning curve).
    Diagnose(DiagnoseArgs),
    /// Combine result files into report.csv and summary.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenTaskArgs {
    /// Object vocabulary size (6..=16).
    #[arg(long, default_value_t = 12)]
    vocab: usize,
    /// Number of scenes; each contributes six questions.
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long)]
    seed: u64,
    /// Output task file.
    #[arg(long, default_value = "task.json")]
    out: PathBuf,
    /// Also export scene images and sidecars into this directory.
    #[arg(long)]
    export_scenes: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Start from a config file instead of the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_h: Option<usize>,
    #[arg(long)]
    l_c: Option<usize>,
    /// Prior-bias strength of the decoder.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    contrast_weight: Option<f64>,
    #[arg(long)]
    answer_step: Option<usize>,
}

impl ConfigArgs {
    fn build(&self, seed: u64) -> Result<RunConfig, Error> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.seed = seed;
        config.calib.seed = seed;
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(v) = self.model_seed {
            config.model_seed = v;
        }
        if let Some(v) = self.encoder_seed {
            config.encoder_seed = v;
        }
        if let Some(v) = self.lambda_s {
            config.calib.lambda_s = v;
        }
        if let Some(v) = self.lambda_c {
            config.calib.lambda_c = v;
        }
        if let Some(v) = self.k {
            config.calib.k = v;
        }
        if let Some(v) = self.n_h {
            config.calib.n_h = v;
        }
        if let Some(v) = self.l_c {
            config.calib.l_c = v;
        }
        if let Some(v) = self.beta {
            config.decoder.prior_bias_strength = v;
        }
        if let Some(v) = self.contrast_weight {
            config.contrast_weight = v;
        }
        if let Some(v) = self.answer_step {
            config.answer_step = v;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Task file produced by gen-task.
    #[arg(long)]
    task: PathBuf,
    /// Master seed for the run (no wall-clock default).
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    task: PathBuf,
    /// Comma-separated modes to run.
    #[arg(long, value_delimiter = ',', default_values_t = Mode::ALL)]
    modes: Vec<Mode>,
    /// Comma-separated master seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    seed: u64,
    /// Scenes per statistic.
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    /// Decode length for the attention trace.
    #[arg(long, default_value_t = 32)]
    trace_len: usize,
    #[arg(long, default_value = "diagnostics-out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Result JSON files (as written by `run`).
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTask(args) => gen_task(args),
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err.category() {
                ErrorCategory::Config => ExitCode::from(2),
                ErrorCategory::Io => ExitCode::from(3),
                ErrorCategory::Numeric => ExitCode::from(4),
            }
        }
    }
}

fn gen_task(args: GenTaskArgs) -> Result<(), Error> {
    let task = build_task(args.vocab, args.scenes, args.seed)?;
    if let Some(dir) = &args.export_scenes {
        std::fs::create_dir_all(dir)?;
        for (i, spec) in task.scene_specs.iter().enumerate() {
            let scene = generate_scene(spec)?;
            export_scene(&scene, &dir.join(format!("scene_{i:04}")))?;
        }
    }
    task.save(&args.out)?;
    println!(
        "task: {} scenes, {} questions, fingerprint {}",
        task.scene_specs.len(),
        task.questions.len(),
        task.fingerprint()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_one(config: &RunConfig, task: &TaskSet, out: &Path) -> Result<RunResult, Error> {
    std::fs::create_dir_all(out)?;
    let result = run_experiment(config, task)?;
    let stem = format!("{}_{}", result.mode, result.seed);
    config.save(&out.join(format!("config_{stem}.txt")))?;
    std::fs::write(
        out.join(format!("result_{stem}.json")),
        serde_json::to_string_pretty(&result).map_err(Error::from)?,
    )?;
    Ok(result)
}

fn run(args: RunArgs) -> Result<(), Error> {
    let task = TaskSet::load(&args.task)?;
    let config = args.config.build(args.seed)?;
    let result = run_one(&config, &task, &args.out)?;
    println!(
        "mode {} seed {}: accuracy {:.4}, f1 {:.4}, proxy rate {:.4} ({} questions, {:.1} ms)",
        result.mode,
        result.seed,
        result.overall.accuracy,
        result.overall.f1,
        result.hallucination_proxy_rate,
        result.overall.n,
        result.timing.total_ms,
    );
    println!("wrote results under {}", args.out.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Error> {
    let task = TaskSet::load(&args.task)?;
    let mut results = Vec::new();
    for &seed in &args.seeds {
        let base = args.config.build(seed)?;
        for &mode in &args.modes {
            let config = RunConfig {
                mode,
                ..base.clone()
            };
            let result = run_one(&config, &task, &args.out)?;
            println!(
                "seed {seed} mode {:<11} accuracy {:.4} f1 {:.4} proxy {:.4}",
                result.mode,
                result.overall.accuracy,
                result.overall.f1,
                result.hallucination_proxy_rate
            );
            results.push(result);
        }
    }
    let (csv, json) = emit_report(&results, &args.out)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<(), Error> {
    use std::fmt::Write as _;

    let config = args.config.build(args.seed)?;
    let model = build_model(&config)?;
    let encoder = build_encoder(&config);
    std::fs::create_dir_all(&args.out)?;

    let mut csv = String::from("kind,key,index,value\n");
    let mut summary = serde_json::Map::new();

    // Attention decay: Kendall tau per seeded scene.
    let mut taus = Vec::new();
    for i in 0..args.scenes {
        let spec = SceneSpec::new(3, 12, substream_seed(args.seed, i as u64));
        let scene = generate_scene(&spec)?;
        let vision = encoder.encode(&scene)?;
        let trace = trace_visual_attention(
            &model,
            &vision,
            &question_tokens(1),
            args.trace_len,
            config.calib.l_c,
        )?;
        let tau = trace.trend();
        let _ = writeln!(csv, "f1_attention_tau,scene,{i},{tau}");
        taus.push(tau);
    }
    let decaying = taus.iter().filter(|&&t| t <= 0.0).count() as f64 / taus.len().max(1) as f64;
    summary.insert("attention_decay_fraction".into(), decaying.into());

    // Complementarity: overlap per scene, queried with the hidden state at
    // the intervention layer.
    let mut overlaps = Vec::new();
    for i in 0..args.scenes {
        let spec = SceneSpec::new(3, 12, substream_seed(args.seed, 1000 + i as u64));
        let scene = generate_scene(&spec)?;
        let vision = encoder.encode(&scene)?;
        let aug = augment(
            &scene,
            &AugmentConfig::default(),
            &mut Rng::substream(args.seed, 2000 + i as u64),
        );
        let v_aug = encoder.encode(&aug)?;
        let states = latentcal::decoder::LayerProbe::probe_layer_states(
            &model,
            &vision,
            &question_tokens(1),
            config.calib.l_c,
        )?;
        let h: &Vec1D = states.last().expect("at least one layer");
        let overlap = complementarity_overlap(&vision, &v_aug, h)?;
        let _ = writeln!(csv, "f2_overlap,scene,{i},{overlap}");
        overlaps.push(overlap);
    }
    let mean_overlap = overlaps.iter().sum::<f64>() / overlaps.len().max(1) as f64;
    summary.insert("mean_overlap".into(), mean_overlap.into());

    // Information gap vs modality gap at the intervention layer.
    let mut diffs = Vec::new();
    for i in 0..args.scenes {
        let spec = SceneSpec::new(3, 12, substream_seed(args.seed, 3000 + i as u64));
        let scene = generate_scene(&spec)?;
        let mut rng = Rng::substream(args.seed, 4000 + i as u64);
        let report = distance_report(
            &model,
            &encoder,
            &scene,
            &question_tokens(1),
            &config.calib,
            &mut rng,
        )?;
        let pruned = report.mean_pruned(config.calib.l_c);
        let masked = report.mean_masked(config.calib.l_c);
        let _ = writeln!(csv, "f3_pruned_mean,scene,{i},{pruned}");
        let _ = writeln!(csv, "f3_masked_mean,scene,{i},{masked}");
        diffs.push(masked - pruned);
    }
    if !diffs.is_empty() {
        let (lo, hi) = bootstrap_mean_ci(&diffs, 2000, 0.95, args.seed);
        summary.insert(
            "masked_minus_pruned_ci".into(),
            serde_json::json!({ "lo": lo, "hi": hi }),
        );
    }

    // Overhead across decode lengths.
    let spec = SceneSpec::new(3, 12, substream_seed(args.seed, 5000));
    let scene = generate_scene(&spec)?;
    for max_new in [16usize, 64, 256] {
        let report = measure_overhead(
            &model,
            &encoder,
            &scene,
            &question_tokens(1),
            &config.calib,
            max_new,
            3,
        )?;
        let _ = writeln!(csv, "overhead_ratio,max_new,{max_new},{}", report.ratio);
        let _ = writeln!(
            csv,
            "overhead_probe_amortized_ms,max_new,{max_new},{}",
            report.probe_amortized_ms
        );
        summary.insert(
            format!("overhead_{max_new}"),
            serde_json::to_value(&report).map_err(Error::from)?,
        );
    }

    // Pruning curve over a fixed grid.
    let task = build_task(12, args.scenes.max(4), substream_seed(args.seed, 6000))?;
    let n_vision = task_vision_tokens(&task);
    let grid: Vec<usize> = [1usize, 2, 5, 10, 20, n_vision]
        .into_iter()
        .filter(|&n| n <= n_vision)
        .collect();
    let curve = pruning_sweep(&config, &task, &grid)?;
    for point in &curve.points {
        let _ = writeln!(
            csv,
            "pruning_accuracy,n_keep,{},{}",
            point.n_keep, point.accuracy
        );
    }
    summary.insert(
        "pruning_curve".into(),
        serde_json::to_value(
            curve
                .points
                .iter()
                .map(|p| (p.n_keep, p.accuracy))
                .collect::<Vec<_>>(),
        )
        .map_err(Error::from)?,
    );

    std::fs::write(args.out.join("diagnostics.csv"), csv)?;
    std::fs::write(
        args.out.join("diagnostics.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(summary)).map_err(Error::from)?,
    )?;
    println!("wrote diagnostics under {}", args.out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Error> {
    let mut results = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)?;
        let result: RunResult = serde_json::from_str(&text).map_err(Error::from)?;
        results.push(result);
    }
    let (csv, json) = emit_report(&results, &args.out)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}
