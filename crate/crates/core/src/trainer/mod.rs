//! Alternating generator/discriminator optimization with checkpointing and a TSV loss log.
//!
//! The data stream is a pure function of `(seed, iteration)`, so the only state a resumed run
//! needs is the iteration counter, the parameters and the optimizer moments.

mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{Preset, TrainConfig};

use crate::checkpoint::{ArchitectureInfo, Container};
use crate::dataset::{Batch, PairDataset};
use crate::discriminator::{pyramid_graph, pyramid_of, MultiScaleDiscriminator};
use crate::error::{Error, Result};
use crate::extractor::PerceptualExtractor;
use crate::generator::GeneratorNet;
use crate::losses::{
    adversarial_graph, combine_graph, discriminator_graph, feature_reg_graph, perceptual_graph, style_graph, LossBreakdown,
};
use crate::nn::{AdamW, Graph};
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.tsv";
pub const METRICS_HEADER: &str = "iteration\tadversarial\tperceptual\tstyle\tfeature_reg\ttotal\tdisc_loss\tlr\twall_time";
pub const FINAL_CHECKPOINT: &str = "final.fsd";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

/// Offset between the generator and discriminator initialization seeds.
const DISCRIMINATOR_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:08}.fsd")
}

/// The extractor selected by the config: external weights if given, else the seeded random net.
pub fn build_extractor(config: &TrainConfig) -> Result<PerceptualExtractor<f32>> {
    let e = match &config.extractor_weights {
        Some(p) => PerceptualExtractor::from_file(p)?,
        None => PerceptualExtractor::random(config.extractor_seed),
    };
    e.with_tap(&config.perceptual_tap)
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Number of completed steps.
    pub iteration: u64,
    pub generator: GeneratorNet<f32>,
    pub discriminator: MultiScaleDiscriminator<f32>,
    pub gen_opt: AdamW<f32>,
    pub disc_opt: AdamW<f32>,
}

/// Losses and learning rate of one completed step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based index of the step.
    pub iteration: u64,
    pub losses: LossBreakdown,
    /// `None` when discriminator updates are disabled.
    pub disc_loss: Option<f64>,
    pub lr: f64,
}

impl StepReport {
    pub fn to_tsv_row(&self, wall_time: f64) -> String {
        let l = &self.losses;
        let d = self.disc_loss.map_or_else(|| "-".to_string(), |v| v.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{d}\t{}\t{wall_time:.3}",
            self.iteration, l.adversarial, l.perceptual, l.style, l.feature_reg, l.total, self.lr
        )
    }
}

impl PartialEq for TrainState {
    /// Bitwise equality of the counter, all parameters and all optimizer moments.
    fn eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.generator.params == other.generator.params
            && self.discriminator.params == other.discriminator.params
            && self.gen_opt == other.gen_opt
            && self.disc_opt == other.disc_opt
    }
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Self {
        let generator = GeneratorNet::new(config.seed);
        let discriminator = MultiScaleDiscriminator::new(config.seed ^ DISCRIMINATOR_SEED_OFFSET);
        let gen_opt = AdamW::new(&generator.params, config.weight_decay);
        let disc_opt = AdamW::new(&discriminator.params, config.weight_decay);
        Self {
            iteration: 0,
            generator,
            discriminator,
            gen_opt,
            disc_opt,
        }
    }

    /// Learning rate of the most recent step under `config`'s schedule.
    pub fn current_lr(&self, config: &TrainConfig) -> f64 {
        config.lr_at(self.iteration)
    }

    fn architecture(&self) -> ArchitectureInfo {
        ArchitectureInfo {
            generator_fingerprint: self.generator.fingerprint(),
            discriminator_fingerprint: Some(self.discriminator.fingerprint()),
        }
    }

    /// Writes parameters, optimizer moments and the iteration counter.
    pub fn save(&self, path: &Path, config: &TrainConfig) -> Result<()> {
        let mut c = Container::new(serde_json::json!({
            "kind": "training-state",
            "iteration": self.iteration,
            "architecture": self.architecture(),
            "gen_adam_step": self.gen_opt.step,
            "disc_adam_step": self.disc_opt.step,
            "config": config.to_text(),
        }));
        let gp = &self.generator.params;
        let dp = &self.discriminator.params;
        c.push_store("gen", gp);
        c.push_store("disc", dp);
        let names = |s: &crate::nn::ParamStore<f32>| (0..s.len()).map(|i| s.name(i).to_string()).collect::<Vec<_>>();
        let (gn, dn) = (names(gp), names(dp));
        c.push_tensors("gen_m", gn.iter().map(String::as_str), &self.gen_opt.first_moment);
        c.push_tensors("gen_v", gn.iter().map(String::as_str), &self.gen_opt.second_moment);
        c.push_tensors("disc_m", dn.iter().map(String::as_str), &self.disc_opt.first_moment);
        c.push_tensors("disc_v", dn.iter().map(String::as_str), &self.disc_opt.second_moment);
        c.write(path)
    }

    /// Restores a state written by [`save`](Self::save), refusing architecture mismatches.
    pub fn load(path: &Path, config: &TrainConfig) -> Result<Self> {
        let c = Container::read(path)?;
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut state = Self::new(config);
        let expected = state.architecture();
        let found: ArchitectureInfo = c
            .meta
            .get("architecture")
            .and_then(|a| serde_json::from_value(a.clone()).ok())
            .ok_or_else(|| bad("missing architecture metadata"))?;
        if found.generator_fingerprint != expected.generator_fingerprint {
            return Err(Error::Fingerprint {
                expected: expected.generator_fingerprint,
                found: found.generator_fingerprint,
            });
        }
        if found.discriminator_fingerprint != expected.discriminator_fingerprint {
            return Err(Error::Fingerprint {
                expected: expected.discriminator_fingerprint.unwrap_or_default(),
                found: found.discriminator_fingerprint.unwrap_or_else(|| "none".into()),
            });
        }
        let field = |k: &str| c.meta.get(k).and_then(|v| v.as_u64()).ok_or_else(|| bad(&format!("missing {k}")));
        state.iteration = field("iteration")?;
        state.gen_opt.step = field("gen_adam_step")?;
        state.disc_opt.step = field("disc_adam_step")?;
        c.fill_store("gen", &mut state.generator.params, path)?;
        c.fill_store("disc", &mut state.discriminator.params, path)?;
        let gp = &state.generator.params;
        let dp = &state.discriminator.params;
        state.gen_opt.first_moment = c.tensors_for("gen_m", (0..gp.len()).map(|i| gp.name(i)), path)?;
        state.gen_opt.second_moment = c.tensors_for("gen_v", (0..gp.len()).map(|i| gp.name(i)), path)?;
        state.disc_opt.first_moment = c.tensors_for("disc_m", (0..dp.len()).map(|i| dp.name(i)), path)?;
        state.disc_opt.second_moment = c.tensors_for("disc_v", (0..dp.len()).map(|i| dp.name(i)), path)?;
        Ok(state)
    }
}

fn non_finite(iteration: u64, batch: &Batch, detail: String) -> Error {
    Error::NonFinite {
        iteration,
        batch_id: batch.names.join(","),
        detail,
    }
}

/// One generator update followed by one discriminator update.
///
/// The discriminator sees the output of the freshly updated generator. The clean-image encoder
/// pass used by feature regularization is a fixed target unless `symmetric_feature_grad` is set.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    config: &TrainConfig,
    extractor: &PerceptualExtractor<f32>,
) -> Result<StepReport> {
    let iteration = state.iteration + 1;
    let lr = config.lr_at(iteration);
    let w = config.weights();

    let (losses, grads) = {
        let mut g = Graph::new();
        let gen = &state.generator;
        let gb = gen.params.bind(&mut g, true);
        let x = g.constant(&batch.hazy);
        let y = g.constant(&batch.clean);
        let (out, enc) = gen.forward_graph(&mut g, &gb, x)?;
        let zero = g.input(Tensor::scalar(0.0), false);

        let adversarial = if w.gamma1 > 0.0 {
            let db = state.discriminator.params.bind(&mut g, false);
            let hp = pyramid_of(&mut g, x);
            let op = pyramid_of(&mut g, out);
            let scores = state.discriminator.score_graph(&mut g, &db, &hp, &op)?;
            adversarial_graph(&mut g, &scores, config.adversarial)
        } else {
            zero
        };
        let (perceptual, style) = if w.gamma2 > 0.0 || w.gamma3 > 0.0 {
            let fo = extractor.forward_graph(&mut g, out);
            let ft = extractor.forward_graph(&mut g, y);
            let p = if w.gamma2 > 0.0 { perceptual_graph(&mut g, fo, ft) } else { zero };
            let s = if w.gamma3 > 0.0 { style_graph(&mut g, fo, ft) } else { zero };
            (p, s)
        } else {
            (zero, zero)
        };
        let feature_reg = if w.gamma4 > 0.0 {
            let clean_enc = if config.symmetric_feature_grad {
                gen.encode_graph(&mut g, &gb, y)?
            } else {
                let frozen = gen.params.bind(&mut g, false);
                gen.encode_graph(&mut g, &frozen, y)?
            };
            let k = config.feature_layer;
            feature_reg_graph(&mut g, enc.layer(k), clean_enc.layer(k), config.fr_reduction)
        } else {
            zero
        };
        let total = combine_graph(&mut g, &w, [adversarial, perceptual, style, feature_reg]);
        let losses = LossBreakdown {
            adversarial: g.scalar(adversarial) as f64,
            perceptual: g.scalar(perceptual) as f64,
            style: g.scalar(style) as f64,
            feature_reg: g.scalar(feature_reg) as f64,
            total: g.scalar(total) as f64,
        };
        if !losses.is_finite() {
            return Err(non_finite(iteration, batch, format!("generator losses {losses:?}")));
        }
        let mut grads = g.backward(total);
        (losses, gen.params.collect_grads(&mut grads, &gb))
    };
    state.gen_opt.update(&mut state.generator.params, &grads, lr);
    if !state.generator.params.all_finite() {
        return Err(non_finite(iteration, batch, "generator parameters became non-finite".into()));
    }

    let disc_loss = if config.train_discriminator {
        let fake = state.generator.forward(&batch.hazy)?;
        let (loss, grads) = {
            let disc = &state.discriminator;
            let mut g = Graph::new();
            let db = disc.params.bind(&mut g, true);
            let hp = pyramid_graph(&mut g, batch.hazy.clone())?;
            let fp = pyramid_graph(&mut g, fake)?;
            let rp = pyramid_graph(&mut g, batch.clean.clone())?;
            let sf = disc.score_graph(&mut g, &db, &hp, &fp)?;
            let sr = disc.score_graph(&mut g, &db, &hp, &rp)?;
            let l = discriminator_graph(&mut g, &sf, &sr);
            let loss = g.scalar(l) as f64;
            if !loss.is_finite() {
                return Err(non_finite(iteration, batch, format!("discriminator loss {loss}")));
            }
            let mut grads = g.backward(l);
            (loss, disc.params.collect_grads(&mut grads, &db))
        };
        state.disc_opt.update(&mut state.discriminator.params, &grads, lr);
        if !state.discriminator.params.all_finite() {
            return Err(non_finite(iteration, batch, "discriminator parameters became non-finite".into()));
        }
        Some(loss)
    } else {
        None
    };
    state.iteration = iteration;
    Ok(StepReport {
        iteration,
        losses,
        disc_loss,
        lr,
    })
}

/// Files produced by [`train`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub state: TrainState,
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    File::create(&probe).map_err(|e| Error::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Opens the loss log, keeping only rows up to `keep_through` when continuing a run.
fn open_metrics_log(path: &Path, keep_through: u64) -> Result<BufWriter<File>> {
    let mut kept = String::from(METRICS_HEADER);
    kept.push('\n');
    if keep_through > 0 {
        if let Ok(old) = fs::read_to_string(path) {
            for line in old.lines().skip(1) {
                let it = line.split('\t').next().and_then(|s| s.parse::<u64>().ok());
                if it.is_some_and(|i| i <= keep_through) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))?;
    let f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

/// Trains on the dataset under `dataset_root` (see [`PairDataset::open`]).
pub fn train(config: &TrainConfig, dataset_root: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let data = PairDataset::open(dataset_root)?;
    train_on(config, &data, out_dir, resume)
}

/// Runs `train_step` until `max_iterations`, writing checkpoints and `metrics.tsv` to `out_dir`.
pub fn train_on(config: &TrainConfig, data: &PairDataset, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    ensure_writable(out_dir)?;
    let extractor = build_extractor(config)?;
    let mut state = match resume {
        Some(p) => {
            let s = TrainState::load(p, config)?;
            log::info!("resuming from {} at iteration {}", p.display(), s.iteration);
            s
        }
        None => TrainState::new(config),
    };
    let mut loader = data.loader(config.patch_size, config.batch_size, config.seed)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut log_file = open_metrics_log(&metrics_path, state.iteration)?;
    let start = Instant::now();
    let io = |e| Error::io(&metrics_path, e);

    while state.iteration < config.max_iterations {
        let batch = loader.batch_at(state.iteration);
        let report = match train_step(&mut state, &batch, config, &extractor) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                log_file.flush().map_err(io)?;
                write_diagnostics(out_dir, &e, &batch)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(log_file, "{}", report.to_tsv_row(start.elapsed().as_secs_f64())).map_err(io)?;
        if report.iteration % 100 == 0 || report.iteration == 1 {
            log::info!(
                "iteration {} total {:.5} disc {:?} lr {:e}",
                report.iteration,
                report.losses.total,
                report.disc_loss,
                report.lr
            );
        }
        if config.checkpoint_interval > 0 && state.iteration % config.checkpoint_interval == 0 {
            log_file.flush().map_err(io)?;
            state.save(&out_dir.join(checkpoint_name(state.iteration)), config)?;
        }
    }
    log_file.flush().map_err(io)?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    state.save(&final_checkpoint, config)?;
    Ok(TrainOutcome {
        final_checkpoint,
        metrics_log: metrics_path,
        state,
    })
}

fn write_diagnostics(out_dir: &Path, err: &Error, batch: &Batch) -> Result<()> {
    let Error::NonFinite {
        iteration,
        batch_id,
        detail,
    } = err
    else {
        return Ok(());
    };
    let doc = serde_json::json!({
        "iteration": iteration,
        "batch_id": batch_id,
        "detail": detail,
        "names": batch.names,
        "crop_windows": batch.windows,
        "hazy_finite": batch.hazy.all_finite(),
        "clean_finite": batch.clean.all_finite(),
    });
    let path = out_dir.join(DIAGNOSTICS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| Error::io(&path, e))
}

/// Rows of a metrics log as `(iteration, total loss)`.
pub fn read_total_losses(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let parse_err = || Error::Parse {
                what: "metrics row",
                line: i + 1,
                reason: format!("{line:?}"),
            };
            let it = f.first().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            let total = f.get(5).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            Ok((it, total))
        })
        .collect()
}
