//! End-to-end orchestration: purification, training, synthesis, error maps,
//! detection, and evaluation, with every intermediate artifact persisted.
//!
//! A run is fully described by a [`PipelineConfig`]. The flat `key = value`
//! config format (with one `[section]` per stage) doubles as the manifest:
//! the manifest written into the output directory parses back into the exact
//! configuration that produced the run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aean::{build_aean, synthesize_hsi, train_aean, TrainConfig};
use crate::cube::Raster;
use crate::detect::{combine_scores, local_scores, weighted_stats, wrx_scores, WindowSpec};
use crate::error::{Error, Result, Stage};
use crate::eval::{detection_map, roc_curve};
use crate::io::{load_cube, load_raster, save_cube, save_raster, CubeFormat, RasterFormat};
use crate::purify::{
    extract_training_sets, global_stats, mahalanobis_scores, threshold_by_confidence,
};
use crate::rem::{default_weight_floor, weights_from_rem, Rem, WeightMap};
use crate::stats::Regularizer;

// ---------------------------------------------------------------------------
// Detector selection
// ---------------------------------------------------------------------------

/// Which score map the pipeline produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorChoice {
    /// Global RX against plain scene statistics.
    Rx,
    /// Dual-window local RX with uniform annulus weights.
    Lrx,
    /// The smoothed reconstruction error map itself.
    Rem(u8),
    /// Global RX with reconstruction-error weights.
    Wrx(u8),
    /// Dual-window local RX with reconstruction-error weights.
    Wlrx(u8),
    /// Convex combination of the three weighted local maps.
    Comb,
}

impl DetectorChoice {
    /// Model dimensionalities this detector needs trained.
    pub fn dims(&self) -> Vec<u8> {
        match self {
            DetectorChoice::Rx | DetectorChoice::Lrx => vec![],
            DetectorChoice::Rem(d) | DetectorChoice::Wrx(d) | DetectorChoice::Wlrx(d) => {
                vec![*d]
            }
            DetectorChoice::Comb => vec![1, 2, 3],
        }
    }
}

impl fmt::Display for DetectorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorChoice::Rx => write!(f, "rx"),
            DetectorChoice::Lrx => write!(f, "lrx"),
            DetectorChoice::Rem(d) => write!(f, "aean-rem-{d}d"),
            DetectorChoice::Wrx(d) => write!(f, "aean-wrx-{d}d"),
            DetectorChoice::Wlrx(d) => write!(f, "aean-wlrx-{d}d"),
            DetectorChoice::Comb => write!(f, "comb"),
        }
    }
}

impl FromStr for DetectorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<DetectorChoice> {
        let norm = s.trim().to_ascii_lowercase();
        let parse_dim = |prefix: &str, body: &str| -> Option<u8> {
            let rest = body.strip_prefix(prefix)?;
            match rest {
                "1d" => Some(1),
                "2d" => Some(2),
                "3d" => Some(3),
                _ => None,
            }
        };
        let body = norm.strip_prefix("aean-").unwrap_or(&norm);
        match body {
            "rx" => return Ok(DetectorChoice::Rx),
            "lrx" => return Ok(DetectorChoice::Lrx),
            "comb" | "comb-aean-wlrx" => return Ok(DetectorChoice::Comb),
            _ => {}
        }
        if let Some(d) = parse_dim("rem-", body) {
            return Ok(DetectorChoice::Rem(d));
        }
        if let Some(d) = parse_dim("wrx-", body) {
            return Ok(DetectorChoice::Wrx(d));
        }
        if let Some(d) = parse_dim("wlrx-", body) {
            return Ok(DetectorChoice::Wlrx(d));
        }
        Err(Error::InvalidParam(format!(
            "unknown detector {s:?} (expected rx, lrx, comb, or {{rem,wrx,wlrx}}-{{1d,2d,3d}})"
        )))
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Every tunable of a pipeline run. Defaults are the reference values:
/// `gamma = 0.99`, block 16, step 8, `lambda = 10`, inner window 1,
/// false-alarm rate 0.01, combination weights 0.01/0.5/0.49.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Input cube (`.bsq`/`.dat`/`.img` for ENVI, `.csv` for text).
    pub cube_path: PathBuf,
    /// Optional binary reference map (`.pgm` or `.csv`); enables evaluation.
    pub reference_path: Option<PathBuf>,
    /// Background confidence for purification.
    pub gamma: f64,
    /// Purification covariance ridge: `ridge_scale * trace(C) / L`.
    pub ridge_scale: f64,
    /// Block size `m` for training-set extraction and the spatial models.
    pub block: usize,
    /// Sliding-window step for training-set extraction.
    pub step: usize,
    /// Reconstruction-loss weight.
    pub lambda: f64,
    /// Optimizer learning rate.
    pub lr: f64,
    /// Training epochs; per-dimensionality defaults when absent.
    pub epochs: Option<usize>,
    /// Training batch size; per-dimensionality defaults when absent.
    pub batch: Option<usize>,
    /// Steps between loss-trace rows.
    pub log_interval: usize,
    /// Structuring-element side for error-map closing.
    pub se_size: usize,
    /// Whether to smooth the error map at all.
    pub smooth: bool,
    pub detector: DetectorChoice,
    /// Inner (guard) window side for local detectors; odd.
    pub inner: usize,
    /// Outer window side for local detectors; odd.
    pub outer: usize,
    /// Detector covariance ridge: `beta_scale * trace(C) / L`.
    pub beta_scale: f64,
    /// Weights for the combined detector, one per dimensionality.
    pub comb_weights: [f64; 3],
    /// False-alarm rate for the detection map.
    pub far: f64,
    pub seed: u64,
    /// Output directory for all artifacts.
    pub output: PathBuf,
}

impl PipelineConfig {
    pub fn new(cube_path: impl Into<PathBuf>, output: impl Into<PathBuf>) -> PipelineConfig {
        PipelineConfig {
            cube_path: cube_path.into(),
            reference_path: None,
            gamma: 0.99,
            ridge_scale: 1e-6,
            block: 16,
            step: 8,
            lambda: 10.0,
            lr: 2e-4,
            epochs: None,
            batch: None,
            log_interval: 50,
            se_size: 3,
            smooth: true,
            detector: DetectorChoice::Wlrx(2),
            inner: 1,
            outer: 15,
            beta_scale: 1e-3,
            comb_weights: [0.01, 0.5, 0.49],
            far: 0.01,
            seed: 0,
            output: output.into(),
        }
    }

    /// Serialize as the sectioned `key = value` manifest format. The result
    /// parses back into an equal configuration.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        s.push_str("[input]\n");
        s.push_str(&format!("cube = {}\n", self.cube_path.display()));
        if let Some(r) = &self.reference_path {
            s.push_str(&format!("reference = {}\n", r.display()));
        }
        s.push_str("\n[purify]\n");
        s.push_str(&format!("gamma = {}\n", self.gamma));
        s.push_str(&format!("ridge_scale = {}\n", self.ridge_scale));
        s.push_str(&format!("block = {}\n", self.block));
        s.push_str(&format!("step = {}\n", self.step));
        s.push_str("\n[train]\n");
        s.push_str(&format!("lambda = {}\n", self.lambda));
        s.push_str(&format!("lr = {}\n", self.lr));
        if let Some(e) = self.epochs {
            s.push_str(&format!("epochs = {e}\n"));
        }
        if let Some(b) = self.batch {
            s.push_str(&format!("batch = {b}\n"));
        }
        s.push_str(&format!("log_interval = {}\n", self.log_interval));
        s.push_str("\n[rem]\n");
        s.push_str(&format!("se = {}\n", self.se_size));
        s.push_str(&format!("smooth = {}\n", self.smooth));
        s.push_str("\n[detect]\n");
        s.push_str(&format!("detector = {}\n", self.detector));
        s.push_str(&format!("inner = {}\n", self.inner));
        s.push_str(&format!("outer = {}\n", self.outer));
        s.push_str(&format!("beta_scale = {}\n", self.beta_scale));
        s.push_str(&format!(
            "comb_weights = {},{},{}\n",
            self.comb_weights[0], self.comb_weights[1], self.comb_weights[2]
        ));
        s.push_str("\n[eval]\n");
        s.push_str(&format!("far = {}\n", self.far));
        s.push_str("\n[run]\n");
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("output = {}\n", self.output.display()));
        s
    }

    /// Parse the manifest/config format. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::new("", "");
        let mut cube_seen = false;
        let mut output_seen = false;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_ascii_lowercase();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidParam(format!(
                    "config line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            let bad = |what: &str| {
                Error::InvalidParam(format!(
                    "config line {}: bad {what} value {value:?}",
                    lineno + 1
                ))
            };
            match (section.as_str(), key.as_str()) {
                ("input", "cube") => {
                    cfg.cube_path = PathBuf::from(value);
                    cube_seen = true;
                }
                ("input", "reference") => cfg.reference_path = Some(PathBuf::from(value)),
                ("purify", "gamma") => cfg.gamma = value.parse().map_err(|_| bad("gamma"))?,
                ("purify", "ridge_scale") => {
                    cfg.ridge_scale = value.parse().map_err(|_| bad("ridge_scale"))?
                }
                ("purify", "block") => cfg.block = value.parse().map_err(|_| bad("block"))?,
                ("purify", "step") => cfg.step = value.parse().map_err(|_| bad("step"))?,
                ("train", "lambda") => cfg.lambda = value.parse().map_err(|_| bad("lambda"))?,
                ("train", "lr") => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
                ("train", "epochs") => cfg.epochs = Some(value.parse().map_err(|_| bad("epochs"))?),
                ("train", "batch") => cfg.batch = Some(value.parse().map_err(|_| bad("batch"))?),
                ("train", "log_interval") => {
                    cfg.log_interval = value.parse().map_err(|_| bad("log_interval"))?
                }
                ("rem", "se") => cfg.se_size = value.parse().map_err(|_| bad("se"))?,
                ("rem", "smooth") => cfg.smooth = value.parse().map_err(|_| bad("smooth"))?,
                ("detect", "detector") => cfg.detector = value.parse()?,
                ("detect", "inner") => cfg.inner = value.parse().map_err(|_| bad("inner"))?,
                ("detect", "outer") => cfg.outer = value.parse().map_err(|_| bad("outer"))?,
                ("detect", "beta_scale") => {
                    cfg.beta_scale = value.parse().map_err(|_| bad("beta_scale"))?
                }
                ("detect", "comb_weights") => {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|t| t.trim().parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("comb_weights"))?;
                    let [a, b, c] = parts[..] else {
                        return Err(bad("comb_weights"));
                    };
                    cfg.comb_weights = [a, b, c];
                }
                ("eval", "far") => cfg.far = value.parse().map_err(|_| bad("far"))?,
                ("run", "seed") => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                ("run", "output") => {
                    cfg.output = PathBuf::from(value);
                    output_seen = true;
                }
                _ => {
                    return Err(Error::InvalidParam(format!(
                        "config line {}: unknown key {key:?} in section [{section}]",
                        lineno + 1
                    )));
                }
            }
        }
        if !cube_seen {
            return Err(Error::InvalidParam("config is missing [input] cube".into()));
        }
        if !output_seen {
            return Err(Error::InvalidParam("config is missing [run] output".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| e.in_stage(Stage::Config))
    }

    fn train_config(&self, dim: u8) -> TrainConfig {
        let defaults = TrainConfig::defaults_for(dim);
        TrainConfig {
            epochs: self.epochs.unwrap_or(defaults.epochs),
            batch_size: self.batch.unwrap_or(defaults.batch_size),
            seed: self.seed,
            lambda: self.lambda,
            lr: self.lr,
            log_interval: self.log_interval,
        }
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// What a pipeline run produced.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub scores: Raster,
    /// Present when a reference map was supplied.
    pub auc: Option<f64>,
    pub output: PathBuf,
}

fn stage<T>(s: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(s))
}

fn write_raster(path: &Path, r: &Raster, format: RasterFormat, s: Stage) -> Result<()> {
    stage(s, save_raster(r, path, format))
}

/// Run the full pipeline, persisting every intermediate artifact in the
/// output directory. Single-dimensionality detectors write unsuffixed
/// artifact names (`model.aean`, `rem.f32`); the combined detector
/// suffixes them per dimensionality (`model-2d.aean`).
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| {
        Error::Io {
            path: cfg.output.clone(),
            source: e,
        }
        .in_stage(Stage::Config)
    })?;
    // Manifest first, so aborted runs stay reproducible.
    std::fs::write(cfg.output.join("manifest.txt"), cfg.to_manifest()).map_err(|e| {
        Error::Io {
            path: cfg.output.join("manifest.txt"),
            source: e,
        }
        .in_stage(Stage::Config)
    })?;

    // Load and normalize.
    let format = CubeFormat::from_path(&cfg.cube_path).ok_or_else(|| {
        Error::InvalidParam(format!(
            "cannot infer cube format from {}",
            cfg.cube_path.display()
        ))
        .in_stage(Stage::Load)
    })?;
    let raw_cube = stage(Stage::Load, load_cube(&cfg.cube_path, format))?;
    let reference = match &cfg.reference_path {
        Some(path) => {
            let rformat = RasterFormat::from_path(path).ok_or_else(|| {
                Error::InvalidParam(format!(
                    "cannot infer reference format from {}",
                    path.display()
                ))
                .in_stage(Stage::Load)
            })?;
            Some(stage(Stage::Load, load_raster(path, rformat))?)
        }
        None => None,
    };
    let cube = raw_cube.normalized();

    // Purification.
    let stats = stage(
        Stage::Purify,
        global_stats(&cube, Regularizer::RelativeTrace(cfg.ridge_scale)),
    )?;
    let md = stage(Stage::Purify, mahalanobis_scores(&cube, &stats))?;
    write_raster(
        &cfg.output.join("md_scores.f32"),
        &md,
        RasterFormat::RawF32,
        Stage::Purify,
    )?;
    let mask = stage(Stage::Purify, threshold_by_confidence(&md, cfg.gamma))?;
    write_raster(
        &cfg.output.join("mask.pgm"),
        &mask.mask,
        RasterFormat::Pgm,
        Stage::Purify,
    )?;

    let dims = cfg.detector.dims();
    let multi = dims.len() > 1;
    let suffix = |base: &str, ext: &str, d: u8| -> PathBuf {
        if multi {
            cfg.output.join(format!("{base}-{d}d.{ext}"))
        } else {
            cfg.output.join(format!("{base}.{ext}"))
        }
    };

    let mut weight_maps: Vec<(u8, WeightMap)> = Vec::new();
    let mut rem_maps: Vec<(u8, Rem)> = Vec::new();
    if !dims.is_empty() {
        let sets = stage(
            Stage::Purify,
            extract_training_sets(&cube, &mask, cfg.block, cfg.step),
        )?;
        let sets = [sets.0, sets.1, sets.2];
        for &d in &dims {
            let set = &sets[(d - 1) as usize];
            stage(Stage::Purify, set.save(&suffix("training-set", "aets", d)))?;

            // Train.
            let mut model = stage(
                Stage::Train,
                build_aean(d, cube.bands(), cfg.block, cfg.seed),
            )?;
            let trace = stage(
                Stage::Train,
                train_aean(&mut model, set, &cfg.train_config(d)),
            )?;
            stage(Stage::Train, trace.save_csv(&suffix("loss", "csv", d)))?;
            stage(Stage::Train, model.save(&suffix("model", "aean", d)))?;

            // Reconstruct.
            let recon = stage(Stage::Reconstruct, synthesize_hsi(&model, &cube))?;
            stage(
                Stage::Reconstruct,
                save_cube(&recon, &suffix("recon", "bsq", d), CubeFormat::EnviBsq),
            )?;

            // Error map and weights.
            let raw = stage(Stage::Rem, crate::rem::compute_rem(&cube, &recon))?;
            let se = if cfg.smooth { cfg.se_size } else { 1 };
            let rem = stage(Stage::Rem, Rem::from_raw(raw, se))?;
            write_raster(
                &suffix("rem", "f32", d),
                &rem.raw,
                RasterFormat::RawF32,
                Stage::Rem,
            )?;
            write_raster(
                &suffix("rem_smooth", "f32", d),
                &rem.smoothed,
                RasterFormat::RawF32,
                Stage::Rem,
            )?;
            let floor = default_weight_floor(&rem.smoothed);
            let weights = stage(Stage::Rem, weights_from_rem(&rem.smoothed, floor))?;
            write_raster(
                &suffix("weights", "f32", d),
                &weights.weights,
                RasterFormat::RawF32,
                Stage::Rem,
            )?;
            weight_maps.push((d, weights));
            rem_maps.push((d, rem));
        }
    }

    // Detection.
    let beta = Regularizer::RelativeTrace(cfg.beta_scale);
    let weights_for = |d: u8| -> &WeightMap {
        &weight_maps
            .iter()
            .find(|(dd, _)| *dd == d)
            .expect("trained dimension")
            .1
    };
    let scores = match cfg.detector {
        DetectorChoice::Rx => {
            let s = stage(Stage::Detect, global_stats(&cube, beta))?;
            stage(Stage::Detect, wrx_scores(&cube, &s))?
        }
        DetectorChoice::Lrx => {
            let win = stage(Stage::Detect, WindowSpec::new(cfg.inner, cfg.outer))?;
            stage(Stage::Detect, local_scores(&cube, None, win, beta))?
        }
        DetectorChoice::Rem(d) => rem_maps
            .iter()
            .find(|(dd, _)| *dd == d)
            .expect("trained dimension")
            .1
            .smoothed
            .clone(),
        DetectorChoice::Wrx(d) => {
            let s = stage(Stage::Detect, weighted_stats(&cube, weights_for(d), beta))?;
            stage(Stage::Detect, wrx_scores(&cube, &s))?
        }
        DetectorChoice::Wlrx(d) => {
            let win = stage(Stage::Detect, WindowSpec::new(cfg.inner, cfg.outer))?;
            stage(
                Stage::Detect,
                local_scores(&cube, Some(weights_for(d)), win, beta),
            )?
        }
        DetectorChoice::Comb => {
            let win = stage(Stage::Detect, WindowSpec::new(cfg.inner, cfg.outer))?;
            let mut maps = Vec::new();
            for &d in &dims {
                let map = stage(
                    Stage::Detect,
                    local_scores(&cube, Some(weights_for(d)), win, beta),
                )?;
                write_raster(
                    &suffix("scores", "f32", d),
                    &map,
                    RasterFormat::RawF32,
                    Stage::Detect,
                )?;
                maps.push(map);
            }
            stage(Stage::Detect, combine_scores(&maps, &cfg.comb_weights))?
        }
    };
    write_raster(
        &cfg.output.join("scores.f32"),
        &scores,
        RasterFormat::RawF32,
        Stage::Detect,
    )?;

    // Evaluation.
    let mut auc = None;
    if let Some(reference) = &reference {
        let roc = stage(Stage::Eval, roc_curve(&scores, reference))?;
        stage(Stage::Eval, roc.save_csv(&cfg.output.join("roc.csv")))?;
        let map = stage(Stage::Eval, detection_map(&scores, reference, cfg.far))?;
        write_raster(
            &cfg.output.join("detection.pgm"),
            &map,
            RasterFormat::Pgm,
            Stage::Eval,
        )?;
        let image = cfg
            .cube_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cube".into());
        stage(
            Stage::Eval,
            append_auc_row(
                &cfg.output.join("auc.csv"),
                &image,
                cfg.detector,
                cfg.seed,
                roc.auc,
            ),
        )?;
        auc = Some(roc.auc);
    }

    Ok(PipelineOutcome {
        scores,
        auc,
        output: cfg.output.clone(),
    })
}

fn append_auc_row(
    path: &Path,
    image: &str,
    detector: DetectorChoice,
    seed: u64,
    auc: f64,
) -> Result<()> {
    use std::io::Write;
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if new {
        writeln!(f, "image,detector,seed,auc").map_err(io_err)?;
    }
    writeln!(f, "{image},{detector},{seed},{auc}").map_err(io_err)?;
    Ok(())
}

/// Run one configuration under several seeds, each in its own `seed-<s>`
/// subdirectory. Returns `(seed, auc)` pairs; AUC values are present when a
/// reference map was configured.
pub fn run_seed_sweep(base: &PipelineConfig, seeds: &[u64]) -> Result<Vec<(u64, Option<f64>)>> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.output = base.output.join(format!("seed-{seed}"));
        let outcome = run_pipeline(&cfg)?;
        out.push((seed, outcome.auc));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
