//! Command-line front end for the anomaly-detection pipeline.
//!
//! Subcommands mirror the pipeline stages (`synth`, `purify`, `train`,
//! `reconstruct`, `detect`, `eval`) plus the end-to-end `pipeline` runner.
//! Input cubes are normalized to `[-1, 1]` before processing, matching the
//! training domain. Failures exit with a stage-specific nonzero code
//! (config 2, load 3, synth 4, purify 5, train 6, reconstruct 7, error-map
//! 8, detect 9, eval 10; 1 otherwise).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hsad::aean::{build_aean, synthesize_hsi, train_aean, AeanModel, TrainConfig};
use hsad::detect::{local_scores, weighted_stats, wrx_scores, WindowSpec};
use hsad::error::{Error, Result, Stage};
use hsad::eval::{detection_map, roc_curve};
use hsad::io::{load_cube, load_raster, save_cube, save_raster, CubeFormat, RasterFormat};
use hsad::pipeline::{run_pipeline, run_seed_sweep, DetectorChoice, PipelineConfig};
use hsad::purify::{
    extract_training_sets, global_stats, mahalanobis_scores, threshold_by_confidence, TrainingSet,
};
use hsad::rem::WeightMap;
use hsad::stats::Regularizer;
use hsad::synth::{generate_synthetic_hsi, SynthSpec};

#[derive(Parser)]
#[command(
    name = "hsad",
    version,
    about = "Unsupervised hyperspectral anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a seeded synthetic scene and its reference map.
    Synth(SynthArgs),
    /// Score pixels against global statistics, threshold at a confidence,
    /// and extract the three background training sets.
    Purify(PurifyArgs),
    /// Train a reconstruction model on a training-set container.
    Train(TrainArgs),
    /// Reconstruct a whole cube with a trained model.
    Reconstruct(ReconstructArgs),
    /// Score a cube with an RX-family detector.
    Detect(DetectArgs),
    /// Evaluate a score map against a reference map.
    Eval(EvalArgs),
    /// Run the whole pipeline from a config file and/or flags.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output cube path (.bsq).
    #[arg(long)]
    cube: PathBuf,
    /// Output reference map path (.pgm).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    bands: usize,
    /// Number of background classes.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Comma-separated square anomaly sides, e.g. 3,2,2,2.
    #[arg(long, default_value = "3,2,2,2", value_parser = parse_usize_list)]
    anomalies: std::vec::Vec<usize>,
    /// Spectral offset of anomalies from the background mean.
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
    /// Additive noise level.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PurifyArgs {
    #[arg(long)]
    cube: PathBuf,
    /// Output directory for mask, scores, and training sets.
    #[arg(long)]
    out: PathBuf,
    /// Background confidence.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Covariance ridge scale (times trace/L).
    #[arg(long, default_value_t = 1e-6)]
    ridge_scale: f64,
    /// Block size for window extraction.
    #[arg(long, default_value_t = 16)]
    block: usize,
    /// Sliding-window step.
    #[arg(long, default_value_t = 8)]
    step: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training-set container (.aets).
    #[arg(long)]
    set: PathBuf,
    /// Output model checkpoint (.aean).
    #[arg(long)]
    model: PathBuf,
    /// Loss-trace CSV path (defaults next to the model).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long, default_value_t = 50)]
    log_interval: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cube: PathBuf,
    /// Output reconstruction (.bsq).
    #[arg(long)]
    out: PathBuf,
    /// Also write the smoothed reconstruction error map here (.f32).
    #[arg(long)]
    rem: Option<PathBuf>,
    /// Also write normalized detector weights here (.f32).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Structuring-element side for error-map smoothing.
    #[arg(long, default_value_t = 3)]
    se: usize,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    cube: PathBuf,
    /// Detector kind: rx, lrx, wrx, wlrx.
    #[arg(long, default_value = "rx")]
    detector: String,
    /// Weight raster (.f32) for the weighted detectors.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output score raster (.f32).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    inner: usize,
    #[arg(long, default_value_t = 15)]
    outer: usize,
    /// Covariance ridge scale (times trace/L).
    #[arg(long, default_value_t = 1e-3)]
    beta_scale: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Score raster (.f32).
    #[arg(long)]
    scores: PathBuf,
    /// Binary reference map (.pgm or .csv).
    #[arg(long)]
    reference: PathBuf,
    /// Output directory for roc.csv and detection.pgm.
    #[arg(long)]
    out: PathBuf,
    /// False-alarm rate for the detection map.
    #[arg(long, default_value_t = 0.01)]
    far: f64,
}

#[derive(Args)]
struct PipelineArgs {
    /// Config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Structuring-element side for error-map smoothing.
    #[arg(long)]
    se: Option<usize>,
    /// Skip error-map smoothing.
    #[arg(long)]
    no_smooth: bool,
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    outer: Option<usize>,
    #[arg(long)]
    beta_scale: Option<f64>,
    #[arg(long)]
    far: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run once per seed into seed-<s> subdirectories and report mean AUC.
    #[arg(long, value_parser = parse_u64_list)]
    seeds: Option<std::vec::Vec<u64>>,
}

fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_u64_list(s: &str) -> std::result::Result<Vec<u64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| e.to_string()))
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Purify(args) => cmd_purify(args),
        Command::Train(args) => cmd_train(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn in_stage<T>(s: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(s))
}

fn load_cube_by_ext(path: &Path) -> Result<hsad::HsiCube> {
    let format = CubeFormat::from_path(path).ok_or_else(|| {
        Error::InvalidParam(format!("cannot infer cube format from {}", path.display()))
    })?;
    load_cube(path, format)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::with_random_classes(
        args.height,
        args.width,
        args.bands,
        args.classes,
        args.seed,
    );
    spec.anomaly_sizes = args.anomalies;
    spec.anomaly_offset = args.offset;
    spec.noise = args.noise;
    let (cube, reference) = in_stage(Stage::Synth, generate_synthetic_hsi(&spec))?;
    in_stage(
        Stage::Synth,
        save_cube(&cube, &args.cube, CubeFormat::EnviBsq),
    )?;
    in_stage(
        Stage::Synth,
        save_raster(&reference, &args.reference, RasterFormat::Pgm),
    )?;
    println!(
        "synthesized {}x{}x{} scene with {} anomalous pixels",
        args.height,
        args.width,
        args.bands,
        spec.anomaly_pixels()
    );
    Ok(())
}

fn cmd_purify(args: PurifyArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let cube = in_stage(Stage::Load, load_cube_by_ext(&args.cube))?.normalized();
    let stats = in_stage(
        Stage::Purify,
        global_stats(&cube, Regularizer::RelativeTrace(args.ridge_scale)),
    )?;
    let scores = in_stage(Stage::Purify, mahalanobis_scores(&cube, &stats))?;
    in_stage(
        Stage::Purify,
        save_raster(
            &scores,
            &args.out.join("md_scores.f32"),
            RasterFormat::RawF32,
        ),
    )?;
    let mask = in_stage(Stage::Purify, threshold_by_confidence(&scores, args.gamma))?;
    in_stage(
        Stage::Purify,
        save_raster(&mask.mask, &args.out.join("mask.pgm"), RasterFormat::Pgm),
    )?;
    let (s1, s2, s3) = in_stage(
        Stage::Purify,
        extract_training_sets(&cube, &mask, args.block, args.step),
    )?;
    for set in [&s1, &s2, &s3] {
        let name = format!("training-set-{}d.aets", set.dim);
        in_stage(Stage::Purify, set.save(&args.out.join(name)))?;
    }
    println!(
        "flagged {} of {} pixels; training sets: {} spectra, {} blocks, {} cubes",
        mask.anomaly_count(),
        cube.num_pixels(),
        s1.len(),
        s2.len(),
        s3.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let set = in_stage(Stage::Load, TrainingSet::load(&args.set))?;
    let defaults = TrainConfig::defaults_for(set.dim);
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch.unwrap_or(defaults.batch_size),
        seed: args.seed,
        lambda: args.lambda,
        lr: args.lr,
        log_interval: args.log_interval,
    };
    let block = if set.dim == 1 { 8 } else { set.block };
    let mut model = in_stage(
        Stage::Train,
        build_aean(set.dim, set.bands, block, args.seed),
    )?;
    let trace = in_stage(Stage::Train, train_aean(&mut model, &set, &cfg))?;
    in_stage(Stage::Train, model.save(&args.model))?;
    let loss_path = args
        .loss_csv
        .unwrap_or_else(|| args.model.with_extension("loss.csv"));
    in_stage(Stage::Train, trace.save_csv(&loss_path))?;
    if let Some(last) = trace.rows.last() {
        println!(
            "trained {}d model for {} steps; final losses: adversarial {:.4}, reconstruction {:.4}",
            set.dim, last.step, last.adversarial, last.reconstruction
        );
    }
    Ok(())
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<()> {
    let model = in_stage(Stage::Load, AeanModel::load(&args.model))?;
    let cube = in_stage(Stage::Load, load_cube_by_ext(&args.cube))?.normalized();
    let recon = in_stage(Stage::Reconstruct, synthesize_hsi(&model, &cube))?;
    in_stage(
        Stage::Reconstruct,
        save_cube(&recon, &args.out, CubeFormat::EnviBsq),
    )?;
    if args.rem.is_some() || args.weights.is_some() {
        let raw = in_stage(Stage::Rem, hsad::rem::compute_rem(&cube, &recon))?;
        let smoothed = in_stage(Stage::Rem, hsad::rem::morphological_close(&raw, args.se))?;
        if let Some(path) = &args.rem {
            in_stage(
                Stage::Rem,
                save_raster(&smoothed, path, RasterFormat::RawF32),
            )?;
        }
        if let Some(path) = &args.weights {
            let floor = hsad::rem::default_weight_floor(&smoothed);
            let weights = in_stage(Stage::Rem, hsad::rem::weights_from_rem(&smoothed, floor))?;
            in_stage(
                Stage::Rem,
                save_raster(&weights.weights, path, RasterFormat::RawF32),
            )?;
        }
    }
    println!("reconstructed {} pixels", recon.num_pixels());
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let cube = in_stage(Stage::Load, load_cube_by_ext(&args.cube))?.normalized();
    let beta = Regularizer::RelativeTrace(args.beta_scale);
    let load_weights = || -> Result<WeightMap> {
        let path = args
            .weights
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("weighted detectors need --weights".into()))?;
        let raster = load_raster(path, RasterFormat::RawF32)?;
        let sum: f64 = raster.data().iter().sum();
        if sum.is_nan() || sum <= 0.0 || raster.data().iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidParam(
                "weight raster must hold positive weights".into(),
            ));
        }
        // Renormalize away the f32 round trip.
        let data: Vec<f64> = raster.data().iter().map(|&w| w / sum).collect();
        Ok(WeightMap {
            weights: hsad::Raster::new(raster.height(), raster.width(), data)?,
            floor: f64::MIN_POSITIVE,
        })
    };
    let scores = match args.detector.as_str() {
        "rx" => {
            let stats = in_stage(Stage::Detect, global_stats(&cube, beta))?;
            in_stage(Stage::Detect, wrx_scores(&cube, &stats))?
        }
        "lrx" => {
            let win = in_stage(Stage::Detect, WindowSpec::new(args.inner, args.outer))?;
            in_stage(Stage::Detect, local_scores(&cube, None, win, beta))?
        }
        "wrx" => {
            let weights = in_stage(Stage::Load, load_weights())?;
            let stats = in_stage(Stage::Detect, weighted_stats(&cube, &weights, beta))?;
            in_stage(Stage::Detect, wrx_scores(&cube, &stats))?
        }
        "wlrx" => {
            let weights = in_stage(Stage::Load, load_weights())?;
            let win = in_stage(Stage::Detect, WindowSpec::new(args.inner, args.outer))?;
            in_stage(
                Stage::Detect,
                local_scores(&cube, Some(&weights), win, beta),
            )?
        }
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown detector {other:?} (expected rx, lrx, wrx, wlrx)"
            ))
            .in_stage(Stage::Config))
        }
    };
    in_stage(
        Stage::Detect,
        save_raster(&scores, &args.out, RasterFormat::RawF32),
    )?;
    println!("wrote {} scores", scores.num_pixels());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let scores = in_stage(Stage::Load, load_raster(&args.scores, RasterFormat::RawF32))?;
    let rformat = RasterFormat::from_path(&args.reference).ok_or_else(|| {
        Error::InvalidParam(format!(
            "cannot infer reference format from {}",
            args.reference.display()
        ))
        .in_stage(Stage::Load)
    })?;
    let reference = in_stage(Stage::Load, load_raster(&args.reference, rformat))?;
    let roc = in_stage(Stage::Eval, roc_curve(&scores, &reference))?;
    in_stage(Stage::Eval, roc.save_csv(&args.out.join("roc.csv")))?;
    let map = in_stage(Stage::Eval, detection_map(&scores, &reference, args.far))?;
    in_stage(
        Stage::Eval,
        save_raster(&map, &args.out.join("detection.pgm"), RasterFormat::Pgm),
    )?;
    println!("auc = {:.6}", roc.auc);
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let cube = args.cube.clone().ok_or_else(|| {
                Error::InvalidParam("pipeline needs --config or --cube".into())
                    .in_stage(Stage::Config)
            })?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("hsad-out"));
            PipelineConfig::new(cube, out)
        }
    };
    if let Some(v) = args.cube {
        cfg.cube_path = v;
    }
    if let Some(v) = args.reference {
        cfg.reference_path = Some(v);
    }
    if let Some(v) = args.out {
        cfg.output = v;
    }
    if let Some(v) = args.detector {
        cfg.detector = v
            .parse::<DetectorChoice>()
            .map_err(|e| e.in_stage(Stage::Config))?;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.block {
        cfg.block = v;
    }
    if let Some(v) = args.step {
        cfg.step = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = Some(v);
    }
    if let Some(v) = args.batch {
        cfg.batch = Some(v);
    }
    if let Some(v) = args.se {
        cfg.se_size = v;
    }
    if args.no_smooth {
        cfg.smooth = false;
    }
    if let Some(v) = args.inner {
        cfg.inner = v;
    }
    if let Some(v) = args.outer {
        cfg.outer = v;
    }
    if let Some(v) = args.beta_scale {
        cfg.beta_scale = v;
    }
    if let Some(v) = args.far {
        cfg.far = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }

    match args.seeds {
        Some(seeds) if !seeds.is_empty() => {
            let results = run_seed_sweep(&cfg, &seeds)?;
            let mut aucs = Vec::new();
            for (seed, auc) in &results {
                match auc {
                    Some(a) => {
                        println!("seed {seed}: auc = {a:.6}");
                        aucs.push(*a);
                    }
                    None => println!("seed {seed}: done (no reference map, no AUC)"),
                }
            }
            if !aucs.is_empty() {
                let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
                println!("mean auc over {} seeds = {mean:.6}", aucs.len());
            }
        }
        _ => {
            let outcome = run_pipeline(&cfg)?;
            match outcome.auc {
                Some(a) => println!("auc = {a:.6}"),
                None => println!("done (no reference map, no AUC)"),
            }
            println!("artifacts in {}", outcome.output.display());
        }
    }
    Ok(())
}
