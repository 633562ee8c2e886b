//! Paired hazy/clean data: synthesis from clean images (and optional depth maps), the
//! `manifest.tsv` record format, and a deterministic random-crop batch loader.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::haze::{synthesize_haze, transmission_from_depth, AtmosphericLight, DepthMap, TransmissionMap};
use crate::image_tensor::ImageTensor;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "name\tm1\tm2\tm3\tmode\tbeta_or_t";
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// How the transmission map is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthesisMode {
    /// `t = exp(−β·d)` from a per-image depth map.
    DepthBased,
    /// A single transmission value for the whole image.
    ConstantT,
}

impl fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthesisMode::DepthBased => "depth-based",
            SynthesisMode::ConstantT => "constant-t",
        })
    }
}

impl FromStr for SynthesisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth-based" | "depth" => Ok(SynthesisMode::DepthBased),
            "constant-t" | "constant" => Ok(SynthesisMode::ConstantT),
            other => Err(Error::Config(format!(
                "unknown synthesis mode {other:?} (expected depth-based or constant-t)"
            ))),
        }
    }
}

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl FromStr for Range {
    type Err = Error;

    /// Accepts `lo,hi` (optionally bracketed) or a single value.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('[').trim_end_matches(']');
        let parts: Vec<&str> = t.split(',').map(str::trim).collect();
        let parse = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {p:?} in range {s:?}")))
        };
        match parts.as_slice() {
            [v] => {
                let v = parse(v)?;
                Ok(Range::new(v, v))
            }
            [lo, hi] => Ok(Range::new(parse(lo)?, parse(hi)?)),
            _ => Err(Error::Config(format!("range {s:?} must be lo,hi"))),
        }
    }
}

/// Parameters for synthesizing hazy images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecipe {
    pub mode: SynthesisMode,
    pub beta_range: Range,
    pub t_range: Range,
    pub light_range: Range,
    pub seed: u64,
}

impl SynthesisRecipe {
    /// Depth-based recipe: β ∈ [0.6, 1.8], airlight components ∈ [0.7, 1.0].
    pub fn indoor(seed: u64) -> Self {
        Self {
            mode: SynthesisMode::DepthBased,
            beta_range: Range::new(0.6, 1.8),
            t_range: Range::new(0.2, 0.6),
            light_range: Range::new(0.7, 1.0),
            seed,
        }
    }

    /// Constant-transmission recipe for near-constant scene depth: t ∈ [0.2, 0.6],
    /// airlight components ∈ [0.7, 1.0].
    pub fn remote_sensing(seed: u64) -> Self {
        Self {
            mode: SynthesisMode::ConstantT,
            ..Self::indoor(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, r: Range, max: f64| {
            if !(r.lo > 0.0 && r.lo <= r.hi && r.hi <= max && r.lo.is_finite() && r.hi.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} [{}, {}] must satisfy 0 < lo ≤ hi ≤ {max}",
                    r.lo, r.hi
                )));
            }
            Ok(())
        };
        check("light range", self.light_range, 1.0)?;
        match self.mode {
            SynthesisMode::ConstantT => check("t range", self.t_range, 1.0),
            SynthesisMode::DepthBased => check("beta range", self.beta_range, f64::MAX),
        }
    }

    /// Independent random stream for one image, keyed by `(seed, name)`.
    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let d = h.finalize();
        ChaCha8Rng::from_seed(d.into())
    }

    /// Draws airlight and β (or t) for one image.
    pub fn sample(&self, name: &str) -> HazeParameters {
        let mut rng = self.rng_for(name);
        let a = [0, 1, 2].map(|_| self.light_range.sample(&mut rng) as f32);
        let value = match self.mode {
            SynthesisMode::DepthBased => self.beta_range.sample(&mut rng),
            SynthesisMode::ConstantT => self.t_range.sample(&mut rng),
        };
        HazeParameters {
            light: AtmosphericLight(a),
            mode: self.mode,
            beta_or_t: value,
        }
    }
}

/// Parameters used to haze one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeParameters {
    pub light: AtmosphericLight,
    pub mode: SynthesisMode,
    /// β for depth-based synthesis, t for constant-t.
    pub beta_or_t: f64,
}

impl HazeParameters {
    /// Builds the transmission map for a `height × width` image.
    pub fn transmission(&self, height: usize, width: usize, depth: Option<&DepthMap>) -> Result<TransmissionMap> {
        match self.mode {
            SynthesisMode::ConstantT => TransmissionMap::constant(height, width, self.beta_or_t as f32),
            SynthesisMode::DepthBased => {
                let depth = depth.ok_or_else(|| Error::Config("depth-based synthesis needs a depth map".into()))?;
                if (depth.height(), depth.width()) != (height, width) {
                    return Err(Error::invalid(format!(
                        "shape mismatch: depth {}×{} vs image {height}×{width}",
                        depth.height(),
                        depth.width()
                    )));
                }
                transmission_from_depth(&depth.normalized(), self.beta_or_t)
            }
        }
    }

    /// Hazes `clean` with these parameters.
    pub fn apply(&self, clean: &ImageTensor, depth: Option<&DepthMap>) -> Result<ImageTensor> {
        let t = self.transmission(clean.height(), clean.width(), depth)?;
        synthesize_haze(clean, &t, &self.light)
    }
}

/// One line of `manifest.tsv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub name: String,
    pub params: HazeParameters,
}

impl ManifestRecord {
    pub fn to_line(&self) -> String {
        let a = self.params.light.0;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.name, a[0], a[1], a[2], self.params.mode, self.params.beta_or_t
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let bad = |reason: String| Error::Parse {
            what: "manifest record",
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 tab-separated fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let a = [num(f[1])? as f32, num(f[2])? as f32, num(f[3])? as f32];
        let mode: SynthesisMode = f[4].parse().map_err(|e: Error| bad(e.to_string()))?;
        Ok(Self {
            name: f[0].to_string(),
            params: HazeParameters {
                light: AtmosphericLight::new(a).map_err(|e| bad(e.to_string()))?,
                mode,
                beta_or_t: num(f[5])?,
            },
        })
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(i, l)| !(l.is_empty() || (*i == 0 && l.starts_with("name\t"))))
        .map(|(i, l)| ManifestRecord::parse_line(l, i + 1))
        .collect()
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Loads a depth map (any image; 16-bit grayscale keeps its precision).
pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let g = img.to_luma32f();
    let (w, h) = g.dimensions();
    DepthMap::new(h as usize, w as usize, g.into_raw())
}

fn find_depth(depth_dir: &Path, name: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| depth_dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
}

/// Writes `count` hazy/clean pairs plus `manifest.tsv` under `out`.
pub fn generate_pairs(
    clean_source: &Path,
    depth_source: Option<&Path>,
    recipe: &SynthesisRecipe,
    out: &Path,
    count: usize,
) -> Result<Vec<ManifestRecord>> {
    recipe.validate()?;
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    if recipe.mode == SynthesisMode::DepthBased && depth_source.is_none() {
        return Err(Error::Config("depth-based synthesis requires a depth directory".into()));
    }
    let sources = list_images(clean_source)?;
    if sources.is_empty() {
        return Err(Error::Config(format!("no images found in {}", clean_source.display())));
    }
    let hazy_dir = out.join("hazy");
    let clean_dir = out.join("clean");
    for d in [&hazy_dir, &clean_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut records = Vec::with_capacity(count);
    for path in &sources {
        if records.len() == count {
            break;
        }
        let name = stem(path);
        let clean = match ImageTensor::load_rgb(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping unreadable image {}: {e}", path.display());
                continue;
            }
        };
        let depth = match (recipe.mode, depth_source) {
            (SynthesisMode::DepthBased, Some(dir)) => {
                let Some(dp) = find_depth(dir, &name) else {
                    log::warn!("skipping {name}: no depth map in {}", dir.display());
                    continue;
                };
                match load_depth(&dp) {
                    Ok(d) => Some(d),
                    Err(e) => {
                        log::warn!("skipping {name}: unreadable depth map: {e}");
                        continue;
                    }
                }
            }
            _ => None,
        };
        let params = recipe.sample(&name);
        let hazy = match params.apply(&clean, depth.as_ref()) {
            Ok(h) => h,
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                continue;
            }
        };
        let file = format!("{name}.png");
        clean.save_png(&clean_dir.join(&file))?;
        hazy.save_png(&hazy_dir.join(&file))?;
        records.push(ManifestRecord { name: file, params });
    }
    if records.len() < count {
        return Err(Error::Config(format!(
            "only {} valid source images, {count} requested",
            records.len()
        )));
    }
    write_manifest(&out.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

/// Hazy/clean pairs held in memory.
#[derive(Clone, Debug)]
pub struct PairDataset {
    pub names: Vec<String>,
    pub hazy: Vec<ImageTensor>,
    pub clean: Vec<ImageTensor>,
}

impl PairDataset {
    /// Loads `root/hazy/*` and `root/clean/*`, which must hold the same file names.
    pub fn open(root: &Path) -> Result<Self> {
        let names_in = |dir: PathBuf| -> Result<BTreeSet<String>> {
            Ok(list_images(&dir)?
                .iter()
                .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from))
                .collect())
        };
        let hazy_names = names_in(root.join("hazy"))?;
        let clean_names = names_in(root.join("clean"))?;
        if hazy_names != clean_names {
            let only_hazy: Vec<_> = hazy_names.difference(&clean_names).cloned().collect();
            let only_clean: Vec<_> = clean_names.difference(&hazy_names).cloned().collect();
            return Err(Error::DatasetIntegrity(format!(
                "hazy/ and clean/ differ: only in hazy: [{}]; only in clean: [{}]",
                only_hazy.join(", "),
                only_clean.join(", ")
            )));
        }
        if hazy_names.is_empty() {
            return Err(Error::DatasetIntegrity(format!("no image pairs under {}", root.display())));
        }
        let mut ds = PairDataset {
            names: Vec::new(),
            hazy: Vec::new(),
            clean: Vec::new(),
        };
        for name in hazy_names {
            let h = ImageTensor::load_rgb(&root.join("hazy").join(&name))?;
            let c = ImageTensor::load_rgb(&root.join("clean").join(&name))?;
            if !h.same_shape(&c) {
                return Err(Error::DatasetIntegrity(format!(
                    "{name}: hazy {:?} and clean {:?} differ in shape",
                    h.shape(),
                    c.shape()
                )));
            }
            ds.names.push(name);
            ds.hazy.push(h);
            ds.clean.push(c);
        }
        Ok(ds)
    }

    pub fn from_pairs(names: Vec<String>, hazy: Vec<ImageTensor>, clean: Vec<ImageTensor>) -> Result<Self> {
        if names.is_empty() || names.len() != hazy.len() || names.len() != clean.len() {
            return Err(Error::DatasetIntegrity("pair lists must be non-empty and equally long".into()));
        }
        for (n, (h, c)) in names.iter().zip(hazy.iter().zip(&clean)) {
            if !h.same_shape(c) || h.channels() != 3 {
                return Err(Error::DatasetIntegrity(format!("{n}: pair shapes differ or are not RGB")));
            }
        }
        Ok(Self { names, hazy, clean })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn loader(&self, patch: usize, batch: usize, seed: u64) -> Result<BatchLoader<'_>> {
        BatchLoader::new(self, patch, batch, seed)
    }
}

/// Aligned crops of a batch of pairs, as `[B, 3, patch, patch]` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub names: Vec<String>,
    /// `(top, left)` of each crop.
    pub windows: Vec<(usize, usize)>,
    pub hazy: Tensor<f32>,
    pub clean: Tensor<f32>,
}

/// Deterministic batch stream with random access by iteration number.
///
/// Epoch `e` uses a fresh permutation and fresh crop windows drawn from a stream keyed by
/// `(seed, e)`, so any iteration can be regenerated without replaying earlier ones.
pub struct BatchLoader<'a> {
    data: &'a PairDataset,
    patch: usize,
    batch: usize,
    seed: u64,
    cached: Option<(u64, Vec<(usize, (usize, usize))>)>,
}

impl<'a> BatchLoader<'a> {
    pub fn new(data: &'a PairDataset, patch: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if patch == 0 {
            return Err(Error::Config("patch size must be at least 1".into()));
        }
        if let Some((n, img)) = data
            .names
            .iter()
            .zip(&data.hazy)
            .find(|(_, img)| img.height() < patch || img.width() < patch)
        {
            return Err(Error::DatasetIntegrity(format!(
                "{n} is {}×{}, smaller than the {patch}×{patch} patch",
                img.height(),
                img.width()
            )));
        }
        Ok(Self {
            data,
            patch,
            batch,
            seed,
            cached: None,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch)
    }

    fn epoch_plan(&mut self, epoch: u64) -> &[(usize, (usize, usize))] {
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut h = Sha256::new();
            h.update(b"loader");
            h.update(self.seed.to_le_bytes());
            h.update(epoch.to_le_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let mut order: Vec<usize> = (0..self.data.len()).collect();
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let plan = order
                .into_iter()
                .map(|i| {
                    let img = &self.data.hazy[i];
                    let top = rng.random_range(0..=img.height() - self.patch);
                    let left = rng.random_range(0..=img.width() - self.patch);
                    (i, (top, left))
                })
                .collect();
            self.cached = Some((epoch, plan));
        }
        &self.cached.as_ref().expect("plan cached").1
    }

    /// The batch consumed at training iteration `iteration` (0-based).
    pub fn batch_at(&mut self, iteration: u64) -> Batch {
        let bpe = self.batches_per_epoch() as u64;
        let epoch = iteration / bpe;
        let slot = (iteration % bpe) as usize;
        let (patch, batch) = (self.patch, self.batch);
        let plan = self.epoch_plan(epoch);
        let picks: Vec<_> = plan[slot * batch..((slot + 1) * batch).min(plan.len())].to_vec();
        let mut names = Vec::with_capacity(picks.len());
        let mut hazy = Vec::with_capacity(picks.len());
        let mut clean = Vec::with_capacity(picks.len());
        for &(i, (top, left)) in &picks {
            names.push(self.data.names[i].clone());
            let crop = |img: &ImageTensor| img.crop(top, left, patch, patch).expect("window inside image");
            hazy.push(crop(&self.data.hazy[i]).to_tensor());
            clean.push(crop(&self.data.clean[i]).to_tensor());
        }
        Batch {
            names,
            windows: picks.iter().map(|p| p.1).collect(),
            hazy: Tensor::stack(&hazy),
            clean: Tensor::stack(&clean),
        }
    }

    /// All batches of one epoch.
    pub fn epoch(&mut self, epoch: u64) -> Vec<Batch> {
        let bpe = self.batches_per_epoch() as u64;
        (0..bpe).map(|i| self.batch_at(epoch * bpe + i)).collect()
    }
}

/// A procedurally generated RGB scene (smooth background, shapes, fine texture), used as
/// clean imagery for self-contained runs and tests.
pub fn synthetic_scene(seed: u64, height: usize, width: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut col = || [0, 1, 2].map(|_| rng.random_range(0.05f32..0.95));
    let (c0, c1, c2) = (col(), col(), col());
    let mut data = vec![0.0f32; height * width * 3];
    for y in 0..height {
        for x in 0..width {
            let u = x as f32 / width.max(1) as f32;
            let v = y as f32 / height.max(1) as f32;
            for ch in 0..3 {
                data[(y * width + x) * 3 + ch] = c0[ch] * (1.0 - u) * (1.0 - v) + c1[ch] * u + c2[ch] * v * (1.0 - u);
            }
        }
    }
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let color = [0, 1, 2].map(|_| rng.random_range(0.0f32..1.0));
        let cy = rng.random_range(0.0..height as f32);
        let cx = rng.random_range(0.0..width as f32);
        let ry = rng.random_range(0.08..0.3) * height as f32;
        let rx = rng.random_range(0.08..0.3) * width as f32;
        let round = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f32 - cy) / ry;
                let dx = (x as f32 - cx) / rx;
                let inside = if round {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    data[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }
    let fy = rng.random_range(0.2f32..0.8);
    let fx = rng.random_range(0.2f32..0.8);
    for y in 0..height {
        for x in 0..width {
            let tex = 0.04 * ((y as f32 * fy).sin() * (x as f32 * fx).cos());
            for ch in 0..3 {
                let v = &mut data[(y * width + x) * 3 + ch];
                *v = (*v + tex).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_vec_clamped(height, width, 3, data)
        .expect("valid scene shape")
        .quantized()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_scenes(dir: &Path, n: usize, side: usize) {
        fs::create_dir_all(dir).unwrap();
        for i in 0..n {
            synthetic_scene(i as u64, side, side)
                .save_png(&dir.join(format!("img{i:03}.png")))
                .unwrap();
        }
    }

    #[test]
    fn range_parsing() {
        assert_eq!("0.2,0.6".parse::<Range>().unwrap(), Range::new(0.2, 0.6));
        assert_eq!("[0.7, 1.0]".parse::<Range>().unwrap(), Range::new(0.7, 1.0));
        assert_eq!("0.5".parse::<Range>().unwrap(), Range::new(0.5, 0.5));
        assert!("a,b".parse::<Range>().is_err());
        assert!("1,2,3".parse::<Range>().is_err());
    }

    #[test]
    fn recipe_validation() {
        assert!(SynthesisRecipe::indoor(0).validate().is_ok());
        assert!(SynthesisRecipe::remote_sensing(0).validate().is_ok());
        let mut r = SynthesisRecipe::remote_sensing(0);
        r.t_range = Range::new(0.0, 0.5);
        assert!(r.validate().is_err());
        r.t_range = Range::new(0.6, 0.2);
        assert!(r.validate().is_err());
        let mut r = SynthesisRecipe::indoor(0);
        r.light_range = Range::new(0.7, 1.2);
        assert!(r.validate().is_err());
    }

    #[test]
    fn manifest_line_round_trip() {
        let r = ManifestRecord {
            name: "a.png".into(),
            params: SynthesisRecipe::indoor(3).sample("a.png"),
        };
        assert_eq!(ManifestRecord::parse_line(&r.to_line(), 1).unwrap(), r);
        assert!(ManifestRecord::parse_line("a\t1\t2", 4).is_err());
    }

    #[test]
    fn constant_recipe_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_scenes(&dir.path().join("src"), 5, 16);
        let mut recipe = SynthesisRecipe::remote_sensing(7);
        recipe.t_range = Range::new(0.2, 0.6);
        let a = generate_pairs(&dir.path().join("src"), None, &recipe, &dir.path().join("a"), 4).unwrap();
        let b = generate_pairs(&dir.path().join("src"), None, &recipe, &dir.path().join("b"), 4).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        let ma = fs::read(dir.path().join("a").join(MANIFEST_FILE)).unwrap();
        let mb = fs::read(dir.path().join("b").join(MANIFEST_FILE)).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(list_images(&dir.path().join("a/hazy")).unwrap().len(), 4);
        assert_eq!(read_manifest(&dir.path().join("a").join(MANIFEST_FILE)).unwrap(), a);
    }

    #[test]
    fn fixed_parameters_give_closed_form_haze() {
        let dir = tempfile::tempdir().unwrap();
        write_scenes(&dir.path().join("src"), 2, 8);
        let recipe = SynthesisRecipe {
            t_range: Range::new(0.5, 0.5),
            light_range: Range::new(1.0, 1.0),
            ..SynthesisRecipe::remote_sensing(1)
        };
        generate_pairs(&dir.path().join("src"), None, &recipe, &dir.path().join("o"), 2).unwrap();
        let ds = PairDataset::open(&dir.path().join("o")).unwrap();
        for (h, c) in ds.hazy.iter().zip(&ds.clean) {
            for (hv, cv) in h.data().iter().zip(c.data()) {
                assert!((hv - (0.5 * cv + 0.5)).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn depth_mode_needs_depth_and_samples_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        write_scenes(&src, 3, 8);
        let recipe = SynthesisRecipe::indoor(5);
        let err = generate_pairs(&src, None, &recipe, &dir.path().join("o"), 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let depth_dir = dir.path().join("depth");
        fs::create_dir_all(&depth_dir).unwrap();
        for i in 0..3 {
            let d: Vec<f32> = (0..64).map(|k| (k % 8) as f32 / 7.0).collect();
            ImageTensor::new(8, 8, 1, d)
                .unwrap()
                .save_png(&depth_dir.join(format!("img{i:03}.png")))
                .unwrap();
        }
        let out = dir.path().join("o");
        let recs = generate_pairs(&src, Some(&depth_dir), &recipe, &out, 3).unwrap();
        for r in &recs {
            assert!(Range::new(0.6, 1.8).contains(r.params.beta_or_t));
            assert!(r.params.light.0.iter().all(|&m| (0.7..=1.0).contains(&m)));
            // re-synthesis reproduces the stored hazy image to 8-bit precision
            let clean = ImageTensor::load(&out.join("clean").join(&r.name)).unwrap();
            let stored = ImageTensor::load(&out.join("hazy").join(&r.name)).unwrap();
            let depth = load_depth(&depth_dir.join(&r.name)).unwrap();
            let again = r.params.apply(&clean, Some(&depth)).unwrap();
            for (a, b) in again.data().iter().zip(stored.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn unreadable_images_are_skipped_but_shortfall_fails() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        write_scenes(&src, 2, 8);
        fs::write(src.join("broken.png"), b"not a png").unwrap();
        let recipe = SynthesisRecipe::remote_sensing(0);
        assert_eq!(generate_pairs(&src, None, &recipe, &dir.path().join("o"), 2).unwrap().len(), 2);
        assert!(generate_pairs(&src, None, &recipe, &dir.path().join("p"), 3).is_err());
        assert!(generate_pairs(&src, None, &recipe, &dir.path().join("q"), 0).is_err());
    }

    #[test]
    fn loader_batches_crops_and_determinism() {
        let scenes: Vec<_> = (0..10).map(|i| synthetic_scene(i, 12, 16)).collect();
        let hazy: Vec<_> = scenes
            .iter()
            .map(|c| SynthesisRecipe::remote_sensing(1).sample("x").apply(c, None).unwrap())
            .collect();
        let names = (0..10).map(|i| format!("{i}.png")).collect();
        let ds = PairDataset::from_pairs(names, hazy, scenes).unwrap();
        let mut a = ds.loader(8, 2, 42).unwrap();
        let mut b = ds.loader(8, 2, 42).unwrap();
        assert_eq!(a.batches_per_epoch(), 5);
        let ea = a.epoch(0);
        assert_eq!(ea, b.epoch(0));
        assert_eq!(a.batch_at(7), b.batch_at(7));
        for batch in &ea {
            assert_eq!(batch.hazy.shape(), [2, 3, 8, 8]);
            for (k, name) in batch.names.iter().enumerate() {
                let i: usize = name.trim_end_matches(".png").parse().unwrap();
                let (top, left) = batch.windows[k];
                let expect = ds.clean[i].crop(top, left, 8, 8).unwrap().to_tensor::<f32>();
                assert_eq!(batch.clean.take_sample(k), expect);
                let expect = ds.hazy[i].crop(top, left, 8, 8).unwrap().to_tensor::<f32>();
                assert_eq!(batch.hazy.take_sample(k), expect);
            }
        }
        let mut seen: Vec<_> = ea.iter().flat_map(|b| b.names.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
        assert_ne!(a.epoch(1), ea);
        assert!(ds.loader(13, 2, 0).is_err());
    }

    #[test]
    fn full_size_patch_is_the_whole_image() {
        let c = synthetic_scene(3, 16, 16);
        let ds = PairDataset::from_pairs(vec!["a".into()], vec![c.clone()], vec![c.clone()]).unwrap();
        let b = ds.loader(16, 1, 0).unwrap().batch_at(0);
        assert_eq!(b.windows, vec![(0, 0)]);
        assert_eq!(b.clean, c.to_tensor());
    }

    #[test]
    fn mismatched_directories_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_scenes(&dir.path().join("hazy"), 2, 8);
        write_scenes(&dir.path().join("clean"), 3, 8);
        let err = PairDataset::open(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::DatasetIntegrity(_)));
        assert!(msg.contains("img002.png"), "{msg}");
    }
}
