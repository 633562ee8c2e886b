//! Command-line entry point: `synthesize`, `train`, `dehaze`, `evaluate`, `det-eval`.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure, 1 anything else.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::load_generator;
use crate::dataset::{generate_pairs, list_images, Range, SynthesisMode, SynthesisRecipe, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;
use crate::inference::{Dehazer, Precision};
use crate::metrics::detection::{categories_of, read_detections, DEFAULT_IOU_THRESHOLD};
use crate::metrics::{mean_average_precision, psnr, ssim, ImageScore, MetricReport, SsimConfig};
use crate::trainer::{train, Preset, TrainConfig, DIAGNOSTICS_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const LOCK_FILE: &str = ".fsdehaze.lock";

#[derive(Debug, Parser)]
#[command(name = "fsdehaze", version, about = "Feature-supervised GAN dehazing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate paired hazy/clean data from clean images.
    Synthesize(SynthesizeArgs),
    /// Train the generator and discriminator.
    Train(TrainArgs),
    /// Dehaze an image or a directory of images with a trained generator.
    Dehaze(DehazeArgs),
    /// PSNR/SSIM report of results against ground truth.
    Evaluate(EvaluateArgs),
    /// Per-category AP and mAP of detection files.
    DetEval(DetEvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    DepthBased,
    ConstantT,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Scattering coefficient range `lo,hi` (depth-based mode).
    #[arg(long, default_value = "0.6,1.8")]
    pub beta_range: Range,
    /// Transmission range `lo,hi` (constant-t mode).
    #[arg(long, default_value = "0.2,0.6")]
    pub t_range: Range,
    /// Atmospheric light component range `lo,hi`.
    #[arg(long, default_value = "0.7,1.0")]
    pub light_range: Range,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub clean_dir: PathBuf,
    #[arg(long)]
    pub depth_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` config file; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root containing `hazy/` and `clean/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss ablation preset: A+P, A+P+FR or A+P+FR+S.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub max_iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training-state checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DehazeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input image file or directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Process images larger than this side length in overlapping tiles.
    #[arg(long)]
    pub tile: Option<usize>,
    /// Recorded in the run manifest; inference itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SsimModeArg {
    Global,
    Windowed,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    pub ssim_mode: SsimModeArg,
    #[arg(long, default_value_t = 11)]
    pub ssim_window: usize,
    /// Average SSIM over colour channels instead of using luma.
    #[arg(long)]
    pub per_channel: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DetEvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub truths: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    /// Comma-separated categories; defaults to every category in either file.
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    /// Table path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// SHA-256 of every produced or consumed artifact, keyed by role.
    pub fingerprints: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(subcommand: &str, config_path: Option<PathBuf>, seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config_path,
            seed,
            started_unix: unix_now(),
            finished_unix: 0,
            fingerprints: BTreeMap::new(),
        }
    }

    fn finish(mut self, dest: Option<&Path>) -> Result<()> {
        self.finished_unix = unix_now();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        match dest {
            Some(p) => fs::write(p, json + "\n").map_err(|e| Error::io(p, e)),
            None => {
                eprintln!("{json}");
                Ok(())
            }
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// SHA-256 of a file's contents.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(&h.finalize()))
}

/// SHA-256 over the relative paths and contents of every file under `dir`, in sorted order.
pub fn dir_fingerprint(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::io(dir, e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).unwrap_or(entry.path());
        if rel.to_str().is_some_and(|s| s == RUN_MANIFEST_FILE || s == LOCK_FILE) {
            continue;
        }
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(file_fingerprint(entry.path())?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

/// Exclusive ownership of an output directory for the lifetime of the guard.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory {} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Maps a library error onto the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::DatasetIntegrity(_)
        | Error::Fingerprint { .. }
        | Error::Parse { .. }
        | Error::Format { .. } => EXIT_CONFIG,
        Error::NonFinite { .. } => EXIT_NUMERICAL,
        Error::Io { .. } | Error::Image { .. } => EXIT_RUNTIME,
    }
}

fn cmd_synthesize(a: &SynthesizeArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    let recipe = SynthesisRecipe {
        mode: match a.mode {
            ModeArg::DepthBased => SynthesisMode::DepthBased,
            ModeArg::ConstantT => SynthesisMode::ConstantT,
        },
        beta_range: a.beta_range,
        t_range: a.t_range,
        light_range: a.light_range,
        seed: a.seed,
    };
    recipe.validate()?;
    let _lock = DirLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new("synthesize", None, a.seed);
    let records = generate_pairs(&a.clean_dir, a.depth_dir.as_deref(), &recipe, &a.out, a.count)?;
    let manifest_path = a.out.join(MANIFEST_FILE);
    manifest.fingerprints.insert("pairs_manifest".into(), file_fingerprint(&manifest_path)?);
    manifest.fingerprints.insert("dataset".into(), dir_fingerprint(&a.out)?);
    println!("{}", manifest_path.display());
    log::info!("wrote {} pairs", records.len());
    manifest.finish(Some(&a.out.join(RUN_MANIFEST_FILE)))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = a.preset {
        config.preset = Some(p);
    }
    if let Some(n) = a.max_iterations {
        config.max_iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let _lock = DirLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new("train", a.config.clone(), config.seed);
    fs::write(a.out.join("config.txt"), config.to_text()).map_err(|e| Error::io(&a.out, e))?;
    manifest.fingerprints.insert("dataset".into(), dir_fingerprint(&a.data)?);
    if let Some(r) = &a.resume {
        manifest.fingerprints.insert("resumed_from".into(), file_fingerprint(r)?);
    }
    let outcome = match train(&config, &a.data, &a.out, a.resume.as_deref()) {
        Ok(o) => o,
        Err(e @ Error::NonFinite { .. }) => {
            eprintln!("diagnostics written to {}", a.out.join(DIAGNOSTICS_FILE).display());
            manifest.finish(Some(&a.out.join(RUN_MANIFEST_FILE)))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    manifest.fingerprints.insert("final_checkpoint".into(), file_fingerprint(&outcome.final_checkpoint)?);
    manifest.fingerprints.insert("metrics_log".into(), file_fingerprint(&outcome.metrics_log)?);
    println!("{}", outcome.final_checkpoint.display());
    manifest.finish(Some(&a.out.join(RUN_MANIFEST_FILE)))
}

fn cmd_dehaze(a: &DehazeArgs) -> Result<()> {
    let inputs = if a.input.is_dir() {
        list_images(&a.input)?
    } else if a.input.is_file() {
        vec![a.input.clone()]
    } else {
        return Err(Error::Config(format!("input {} does not exist", a.input.display())));
    };
    if inputs.is_empty() {
        return Err(Error::Config(format!("no images found in {}", a.input.display())));
    }
    let net = load_generator(&a.checkpoint)?;
    let dehazer = Dehazer::new(net, Precision::from_env()?).with_tile(a.tile)?;
    let _lock = DirLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new("dehaze", None, a.seed);
    manifest.fingerprints.insert("checkpoint".into(), file_fingerprint(&a.checkpoint)?);
    for path in &inputs {
        let img = ImageTensor::load_rgb(path)?;
        let out = dehazer.dehaze(&img)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let dest = a.out.join(format!("{name}.png"));
        out.save_png(&dest)?;
        manifest.fingerprints.insert(format!("output/{name}.png"), file_fingerprint(&dest)?);
        log::info!("{} -> {}", path.display(), dest.display());
    }
    manifest.finish(Some(&a.out.join(RUN_MANIFEST_FILE)))
}

fn names_of(paths: &[PathBuf]) -> BTreeMap<String, PathBuf> {
    paths
        .iter()
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(|n| (n.to_string(), p.clone())))
        .collect()
}

/// PSNR/SSIM of every result image against the same-named truth image.
pub fn evaluate_dirs(results: &Path, truth: &Path, cfg: &SsimConfig) -> Result<MetricReport> {
    let r = names_of(&list_images(results)?);
    let t = names_of(&list_images(truth)?);
    let only_r: Vec<&String> = r.keys().filter(|k| !t.contains_key(*k)).collect();
    let only_t: Vec<&String> = t.keys().filter(|k| !r.contains_key(*k)).collect();
    if !only_r.is_empty() || !only_t.is_empty() {
        return Err(Error::DatasetIntegrity(format!(
            "unmatched file names; only in results: {only_r:?}; only in truth: {only_t:?}"
        )));
    }
    if r.is_empty() {
        return Err(Error::Config(format!("no images found in {}", results.display())));
    }
    let mut rows = Vec::with_capacity(r.len());
    for (name, rp) in &r {
        let mut res = ImageTensor::load(rp)?;
        let mut tru = ImageTensor::load(&t[name])?;
        if res.channels() != tru.channels() {
            res = res.to_rgb();
            tru = tru.to_rgb();
        }
        rows.push(ImageScore {
            name: name.clone(),
            psnr: psnr(&tru, &res, 1.0)?,
            ssim: ssim(&tru, &res, cfg)?,
        });
    }
    Ok(MetricReport::from_rows(rows))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn manifest_beside(out: Option<&Path>) -> Option<PathBuf> {
    out.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut cfg = SsimConfig::default();
    cfg.per_channel = a.per_channel;
    if let SsimModeArg::Windowed = a.ssim_mode {
        cfg = cfg.windowed(a.ssim_window);
    }
    let mut manifest = RunManifest::new("evaluate", None, a.seed);
    let report = evaluate_dirs(&a.results, &a.truth, &cfg)?;
    let text = report.to_tsv();
    write_or_print(a.out.as_deref(), &text)?;
    manifest.fingerprints.insert("results".into(), dir_fingerprint(&a.results)?);
    manifest.fingerprints.insert("truth".into(), dir_fingerprint(&a.truth)?);
    manifest.fingerprints.insert("report".into(), hex::encode(&Sha256::digest(text.as_bytes())));
    manifest.finish(manifest_beside(a.out.as_deref()).as_deref())
}

fn cmd_det_eval(a: &DetEvalArgs) -> Result<()> {
    let preds = read_detections(&a.predictions)?;
    let truths = read_detections(&a.truths)?;
    if let Some(p) = preds.iter().find(|p| !p.is_prediction()) {
        return Err(Error::invalid(format!("prediction file has a record without score (image {})", p.image_id)));
    }
    if let Some(t) = truths.iter().find(|t| t.is_prediction()) {
        return Err(Error::invalid(format!("ground-truth file has a scored record (image {})", t.image_id)));
    }
    let categories = a.categories.clone().unwrap_or_else(|| categories_of(&preds, &truths));
    let mut manifest = RunManifest::new("det-eval", None, a.seed);
    let report = mean_average_precision(&preds, &truths, &categories, a.iou)?;
    let text = report.to_table();
    write_or_print(a.out.as_deref(), &text)?;
    manifest.fingerprints.insert("predictions".into(), file_fingerprint(&a.predictions)?);
    manifest.fingerprints.insert("truths".into(), file_fingerprint(&a.truths)?);
    manifest.fingerprints.insert("table".into(), hex::encode(&Sha256::digest(text.as_bytes())));
    manifest.finish(manifest_beside(a.out.as_deref()).as_deref())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Train(a) => cmd_train(a),
        Command::Dehaze(a) => cmd_dehaze(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::DetEval(a) => cmd_det_eval(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
